//! Uniform invocation interface over HTTP endpoints and the simulator.

use std::collections::BTreeMap;
use std::net::{TcpStream, ToSocketAddrs};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::record::{CallIndex, Status, TargetKind, Workload};
use crate::time::Clock;

/// Identifies one deployed function copy.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct FunctionKey {
    pub name: String,
    pub memory_mb: u32,
    pub copy_index: u32,
}

impl FunctionKey {
    pub fn new(name: impl Into<String>, memory_mb: u32, copy_index: u32) -> Self {
        Self {
            name: name.into(),
            memory_mb,
            copy_index,
        }
    }
}

#[derive(Debug, Clone)]
pub struct InvocationRequest {
    pub function_key: FunctionKey,
    pub loop_id: String,
    pub call_index: CallIndex,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InvocationOutcome {
    pub instance_id: String,
    pub cold: bool,
    pub handler_duration_ms: f64,
    pub billed_duration_ms: f64,
    pub status: Status,
    pub error_detail: Option<String>,
}

impl InvocationOutcome {
    pub fn failed(detail: impl Into<String>) -> Self {
        Self {
            instance_id: String::new(),
            cold: false,
            handler_duration_ms: 0.0,
            billed_duration_ms: 0.0,
            status: Status::Error,
            error_detail: Some(detail.into()),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum TargetError {
    #[error("target unreachable: {0}")]
    Unreachable(String),
    #[error("response does not match the workload schema: {0}")]
    Schema(String),
    #[error("no target configured for function {0:?}")]
    UnknownFunction(FunctionKey),
    #[error("invalid endpoint `{endpoint}`: {reason}")]
    InvalidEndpoint { endpoint: String, reason: String },
    #[error(transparent)]
    Sim(#[from] crate::sim::SimError),
}

#[derive(Debug, thiserror::Error, PartialEq)]
#[error("raw duration must be a finite non-negative number and quantum positive (raw {raw_ms}, quantum {quantum_ms})")]
pub struct QuantizeError {
    pub raw_ms: f64,
    pub quantum_ms: f64,
}

/// Rounds `raw_ms` up to the next multiple of `quantum_ms`.
pub fn quantize_billed(raw_ms: f64, quantum_ms: f64) -> Result<f64, QuantizeError> {
    if !(raw_ms >= 0.0) || !raw_ms.is_finite() || !(quantum_ms > 0.0) || !quantum_ms.is_finite() {
        return Err(QuantizeError { raw_ms, quantum_ms });
    }
    Ok(quantum_ms * (raw_ms / quantum_ms).ceil())
}

pub trait InvocationTarget: Send + Sync {
    fn kind(&self) -> TargetKind;

    /// Checks reachability without invoking any function.
    fn probe(&self) -> Result<(), TargetError>;

    /// Performs one call. Transport failures come back as an outcome with
    /// `status = error`; `Err` is reserved for schema and configuration faults.
    fn invoke(
        &self,
        request: &InvocationRequest,
        clock: &dyn Clock,
    ) -> Result<InvocationOutcome, TargetError>;
}

/// Request body sent to workload handlers.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WorkloadRequest {
    pub run_id: String,
    pub loop_id: String,
    pub call_index: u8,
}

/// Response body returned by workload handlers.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WorkloadResponse {
    pub instance_id: String,
    pub cold: bool,
    pub handler_duration_ms: f64,
    pub workload: Workload,
    pub result_digest: String,
}

#[derive(Debug, Clone)]
pub struct HttpTargetConfig {
    pub run_id: String,
    pub billing_quantum_ms: f64,
    pub timeout: Duration,
    pub bearer_token: Option<String>,
}

/// Invokes deployed handlers over HTTP POST.
///
/// Billed duration is approximated from the handler-reported duration
/// rounded up to the billing quantum; it does not include platform-side
/// overhead that a provider's billing log would show.
pub struct HttpTarget {
    /// (function name, memory) -> endpoint template; `{copy}` is replaced
    /// by the copy index.
    endpoints: BTreeMap<(String, u32), String>,
    agent: ureq::Agent,
    config: HttpTargetConfig,
}

impl HttpTarget {
    pub fn new(config: HttpTargetConfig) -> Self {
        let agent = ureq::AgentBuilder::new().timeout(config.timeout).build();
        Self {
            endpoints: BTreeMap::new(),
            agent,
            config,
        }
    }

    pub fn add_endpoint(
        &mut self,
        name: impl Into<String>,
        memory_mb: u32,
        template: impl Into<String>,
    ) {
        self.endpoints
            .insert((name.into(), memory_mb), template.into());
    }

    pub fn endpoint_for(&self, key: &FunctionKey) -> Result<String, TargetError> {
        self.endpoints
            .get(&(key.name.clone(), key.memory_mb))
            .map(|t| t.replace("{copy}", &key.copy_index.to_string()))
            .ok_or_else(|| TargetError::UnknownFunction(key.clone()))
    }

    fn parse_response(&self, body: &str) -> Result<WorkloadResponse, TargetError> {
        let resp: WorkloadResponse =
            serde_json::from_str(body).map_err(|e| TargetError::Schema(e.to_string()))?;
        if !(resp.handler_duration_ms >= 0.0) || !resp.handler_duration_ms.is_finite() {
            return Err(TargetError::Schema(format!(
                "handler_duration_ms must be >= 0, got {}",
                resp.handler_duration_ms
            )));
        }
        if resp.instance_id.is_empty() {
            return Err(TargetError::Schema("empty instance_id".into()));
        }
        Ok(resp)
    }
}

fn socket_of(endpoint: &str) -> Result<String, TargetError> {
    let invalid = |reason: &str| TargetError::InvalidEndpoint {
        endpoint: endpoint.to_string(),
        reason: reason.to_string(),
    };
    let url = url::Url::parse(endpoint).map_err(|e| invalid(&e.to_string()))?;
    let host = url.host_str().ok_or_else(|| invalid("missing host"))?;
    let port = url
        .port_or_known_default()
        .ok_or_else(|| invalid("missing port"))?;
    Ok(format!("{host}:{port}"))
}

impl InvocationTarget for HttpTarget {
    fn kind(&self) -> TargetKind {
        TargetKind::Http
    }

    /// Opens a TCP connection to every configured host. A POST would start an
    /// instance and turn the first measured call into an unexpected warm start.
    fn probe(&self) -> Result<(), TargetError> {
        for template in self.endpoints.values() {
            let endpoint = template.replace("{copy}", "0");
            let socket = socket_of(&endpoint)?;
            let addrs: Vec<_> = socket
                .to_socket_addrs()
                .map_err(|e| TargetError::Unreachable(format!("{socket}: {e}")))?
                .collect();
            let reachable = addrs.iter().any(|a| {
                TcpStream::connect_timeout(a, self.config.timeout.min(Duration::from_secs(10)))
                    .is_ok()
            });
            if !reachable {
                return Err(TargetError::Unreachable(socket));
            }
        }
        Ok(())
    }

    fn invoke(
        &self,
        request: &InvocationRequest,
        _clock: &dyn Clock,
    ) -> Result<InvocationOutcome, TargetError> {
        let endpoint = self.endpoint_for(&request.function_key)?;
        let body = WorkloadRequest {
            run_id: self.config.run_id.clone(),
            loop_id: request.loop_id.clone(),
            call_index: request.call_index.into(),
        };
        let mut req = self.agent.post(&endpoint);
        if let Some(token) = &self.config.bearer_token {
            req = req.set("Authorization", &format!("Bearer {token}"));
        }
        let started = Instant::now();
        let response = match req.send_json(&body) {
            Ok(r) => r,
            Err(ureq::Error::Status(code, _)) => {
                return Ok(InvocationOutcome::failed(format!("HTTP status {code}")));
            }
            Err(e) => return Ok(InvocationOutcome::failed(e.to_string())),
        };
        let text = match response.into_string() {
            Ok(t) => t,
            Err(e) => return Ok(InvocationOutcome::failed(e.to_string())),
        };
        log::trace!("{} answered in {:?}", endpoint, started.elapsed());
        let parsed = self.parse_response(&text)?;
        let billed = quantize_billed(parsed.handler_duration_ms, self.config.billing_quantum_ms)
            .map_err(|e| TargetError::Schema(e.to_string()))?;
        Ok(InvocationOutcome {
            instance_id: parsed.instance_id,
            cold: parsed.cold,
            handler_duration_ms: parsed.handler_duration_ms,
            billed_duration_ms: billed,
            status: Status::Ok,
            error_detail: None,
        })
    }
}
