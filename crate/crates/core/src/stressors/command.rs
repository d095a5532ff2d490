use std::process::{Command, Stdio};

use super::{AchievedIntensity, StressorError, StressorHandle};

/// Runs an external load generator until stop, then kills it.
pub fn start_command_stress(command: &[String]) -> Result<StressorHandle, StressorError> {
    let (program, args) = command
        .split_first()
        .ok_or_else(|| StressorError::InvalidSpec("stressor command is empty".into()))?;
    let child = Command::new(program)
        .args(args)
        .stdin(Stdio::null())
        .stdout(Stdio::null())
        .spawn()
        .map_err(|source| StressorError::Startup {
            what: format!("command {program}"),
            source,
        })?;
    let pid = child.id();
    let mut handle = StressorHandle::new(
        format!("command {}", command.join(" ")),
        Box::new(move |_| AchievedIntensity::Command { pid }),
    );
    handle.child = Some(child);
    Ok(handle)
}
