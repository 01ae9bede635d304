use std::fs;
use std::path::Path;
use std::time::Instant;

use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use supercut::panoptic::StageTimings;
use supercut::Error;

/// Record of one run: the exact command line, resolved configuration,
/// input digests, stage timings and outputs.
pub struct Manifest {
    argv: Vec<String>,
    config: Value,
    inputs: Vec<(String, String)>,
    timings: StageTimings,
    outputs: Vec<String>,
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

impl Manifest {
    pub fn new(argv: Vec<String>) -> Self {
        Self {
            argv,
            config: Value::Null,
            inputs: Vec::new(),
            timings: StageTimings::default(),
            outputs: Vec::new(),
        }
    }

    pub fn input(&mut self, path: &Path) -> Result<(), Error> {
        let name = path.display().to_string();
        if !self.inputs.iter().any(|(p, _)| *p == name) {
            let bytes = fs::read(path).map_err(|e| std::io::Error::new(e.kind(), format!("{name}: {e}")))?;
            let digest = sha256_hex(&bytes);
            self.inputs.push((name, digest));
        }
        Ok(())
    }

    pub fn output(&mut self, path: &Path) {
        self.outputs.push(path.display().to_string());
    }

    pub fn config<T: Serialize>(&mut self, config: &T) {
        self.config = serde_json::to_value(config).expect("serializable config");
    }

    pub fn timings(&mut self, timings: &StageTimings) {
        self.timings.0.extend(timings.0.iter().cloned());
    }

    pub fn time<T>(&mut self, stage: &str, f: impl FnOnce() -> T) -> T {
        let start = Instant::now();
        let out = f();
        self.timings.0.push((stage.to_string(), start.elapsed().as_secs_f64() * 1e3));
        out
    }

    pub fn finish(self) -> Value {
        let inputs: serde_json::Map<String, Value> = self.inputs.into_iter().map(|(p, h)| (p, Value::String(h))).collect();
        json!({
            "tool_version": env!("CARGO_PKG_VERSION"),
            "argv": self.argv,
            "config": self.config,
            "inputs": inputs,
            "timings_ms": self.timings,
            "outputs": self.outputs,
        })
    }

    /// The command line recorded in a manifest file.
    pub fn load(path: &Path) -> Result<Vec<String>, Error> {
        let text = fs::read_to_string(path)?;
        let bad = |line: usize, message: String| Error::Format {
            path: path.display().to_string(),
            line,
            message,
        };
        let value: Value = serde_json::from_str(&text).map_err(|e| bad(e.line(), e.to_string()))?;
        value["argv"]
            .as_array()
            .and_then(|a| a.iter().map(|v| v.as_str().map(String::from)).collect::<Option<Vec<_>>>())
            .ok_or_else(|| bad(1, "manifest has no argv list".into()))
    }
}
