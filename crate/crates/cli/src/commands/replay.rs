use std::path::Path;

use crate::error::{CliError, Result};
use crate::execute;
use crate::manifest::{hash_file, Manifest, MANIFEST_FILE};

/// Reruns the manifest's command into `out` (default: `replay/` beside the
/// manifest) and compares every result hash. Exit 0 only when all match.
pub fn replay(manifest: &Path, out: Option<&Path>) -> Result<i32> {
    let original = Manifest::read(manifest)?;
    let dir = manifest.parent().unwrap_or(Path::new("."));
    let out = out.map(Path::to_path_buf).unwrap_or_else(|| dir.join("replay"));
    if std::path::absolute(&out).ok() == std::path::absolute(dir).ok() {
        return Err(CliError::Config("replay output directory must differ from the recorded run".into()));
    }
    for (file, sha) in &original.inputs {
        if hash_file(Path::new(file))? != *sha {
            return Err(CliError::Check(format!("input {file} changed since the recorded run")));
        }
    }
    let code = match execute(&original.command, &original.config, &out) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("replayed command failed: {e}");
            e.exit_code()
        }
    };
    let rerun = Manifest::read(&out.join(MANIFEST_FILE))?;
    let mut identical = rerun.results.len() == original.results.len();
    for (file, sha) in &original.results {
        let same = rerun.results.iter().any(|(f, s)| f == file && s == sha);
        println!("{} {file}", if same { "identical" } else { "differs" });
        identical &= same;
    }
    for (file, _) in rerun.results.iter().filter(|(f, _)| !original.results.iter().any(|(g, _)| g == f)) {
        println!("extra {file}");
    }
    if original.exit_code != Some(code) {
        println!("exit code {code} differs from recorded {:?}", original.exit_code);
        identical = false;
    }
    Ok(if identical { 0 } else { 1 })
}
