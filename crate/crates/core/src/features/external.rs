use std::env;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::atomic::{AtomicU64, Ordering};

use super::{read_layer_stack, ExtractRequest, FeatureBackend, LayerStack};
use crate::error::{Error, Result};

static CALLS: AtomicU64 = AtomicU64::new(0);

/// Adapter for an out-of-process encoder.
///
/// For every utterance the program is invoked as
/// `program [args...] <utterance_id> <wav_in> <lstk_out>` and must write a
/// layer-stack file for that utterance to `<lstk_out>`, exiting with status 0.
/// Each call spawns its own process, so the adapter is reentrant.
#[derive(Debug, Clone)]
pub struct ExternalEncoder {
    program: PathBuf,
    args: Vec<String>,
}

fn on_path(program: &Path) -> bool {
    if program.components().count() > 1 {
        return program.is_file();
    }
    env::var_os("PATH")
        .map(|paths| env::split_paths(&paths).any(|dir| dir.join(program).is_file()))
        .unwrap_or(false)
}

impl ExternalEncoder {
    pub fn new(program: PathBuf, args: Vec<String>) -> Result<Self> {
        if !on_path(&program) {
            return Err(Error::Environment(format!(
                "encoder program '{}' not found",
                program.display()
            )));
        }
        Ok(Self { program, args })
    }
}

impl FeatureBackend for ExternalEncoder {
    fn extract(&self, request: &ExtractRequest<'_>) -> Result<LayerStack> {
        let audio = request.audio_path.ok_or_else(|| {
            Error::input(format!(
                "external encoder needs an audio file for '{}'",
                request.utterance_id
            ))
        })?;
        let out = env::temp_dir().join(format!(
            "vtad-{}-{}.lstk",
            std::process::id(),
            CALLS.fetch_add(1, Ordering::Relaxed)
        ));
        let output = Command::new(&self.program)
            .args(&self.args)
            .arg(request.utterance_id)
            .arg(audio)
            .arg(&out)
            .output()
            .map_err(|e| Error::Environment(format!("cannot run '{}': {e}", self.program.display())))?;
        if !output.status.success() {
            let _ = fs::remove_file(&out);
            return Err(Error::Environment(format!(
                "encoder exited with {} on '{}': {}",
                output.status,
                request.utterance_id,
                String::from_utf8_lossy(&output.stderr).trim()
            )));
        }
        let stack = read_layer_stack(&out);
        let _ = fs::remove_file(&out);
        let stack = stack?;
        if stack.utterance_id() != request.utterance_id {
            return Err(Error::contract(format!(
                "encoder returned utterance '{}' for '{}'",
                stack.utterance_id(),
                request.utterance_id
            )));
        }
        Ok(stack)
    }
}
