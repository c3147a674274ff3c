use crate::error::{CliError, Result};
use crate::manifest::Run;
use crate::{execute, Axis, Command, RunConfig};

pub const ABLATION_CSV_HEADER: &str = "cell,combine,attention,sampling,modules,output_hash,total_loss";

/// Settings of one axis: a label and the overrides that realize it.
fn settings(axis: Axis) -> Vec<(&'static str, Vec<String>)> {
    let set = |pairs: &[(&str, &str)]| pairs.iter().map(|(k, v)| format!("{k}={v}")).collect::<Vec<_>>();
    match axis {
        Axis::Combine => ["subtract", "add", "concat"]
            .into_iter()
            .map(|m| (m, set(&[("pipeline.network.combine_mode", m)])))
            .collect(),
        Axis::Attention => [
            ("---", ["subtract", "subtract", "subtract"]),
            ("xxx", ["multiply", "multiply", "multiply"]),
            ("xx-", ["multiply", "multiply", "subtract"]),
            ("--x", ["subtract", "subtract", "multiply"]),
        ]
        .into_iter()
        .map(|(label, [d, u, f])| {
            let overrides = set(&[
                ("pipeline.network.attn_modes.ptd", d),
                ("pipeline.network.attn_modes.ptu", u),
                ("pipeline.network.attn_modes.pft", f),
            ]);
            (label, overrides)
        })
        .collect(),
        Axis::Sampling => ["kps", "fps"]
            .into_iter()
            .map(|m| (m, set(&[("pipeline.sampling", m)])))
            .collect(),
        Axis::Modules => [
            ("none", [false, false, false]),
            ("ptd", [true, false, false]),
            ("ptu", [false, true, false]),
            ("pft", [false, false, true]),
            ("ptd+ptu", [true, true, false]),
            ("ptd+ptu+pft", [true, true, true]),
        ]
        .into_iter()
        .map(|(label, [d, u, f])| {
            let overrides = set(&[
                ("pipeline.network.use_ptd", &d.to_string()),
                ("pipeline.network.use_ptu", &u.to_string()),
                ("pipeline.network.use_pft", &f.to_string()),
            ]);
            (label, overrides)
        })
        .collect(),
    }
}

/// One point of the sweep: the chosen label per axis and the resulting configuration.
#[derive(Clone, Debug, PartialEq)]
pub struct AblationCell {
    pub labels: Vec<(Axis, &'static str)>,
    pub config: RunConfig,
}

impl AblationCell {
    fn label(&self, axis: Axis) -> &'static str {
        self.labels.iter().find(|(a, _)| *a == axis).map_or("default", |(_, l)| l)
    }
}

/// Cartesian product of the axes (duplicates ignored), first axis varying slowest.
pub fn ablation_cells(base: &RunConfig, axes: &[Axis]) -> Result<Vec<AblationCell>> {
    let mut cells = vec![AblationCell {
        labels: Vec::new(),
        config: base.clone(),
    }];
    let mut seen = Vec::new();
    for &axis in axes {
        if seen.contains(&axis) {
            continue;
        }
        seen.push(axis);
        let mut next = Vec::new();
        for cell in &cells {
            for (label, overrides) in settings(axis) {
                let mut config = cell.config.clone();
                for o in &overrides {
                    config = config.with_override(o)?;
                }
                config.validate()?;
                let mut labels = cell.labels.clone();
                labels.push((axis, label));
                next.push(AblationCell { labels, config });
            }
        }
        cells = next;
    }
    Ok(cells)
}

fn probe_result(dir: &std::path::Path) -> Result<(String, String)> {
    let path = dir.join("probe.csv");
    let text = std::fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
    let row = text.lines().nth(1).ok_or_else(|| CliError::Check(format!("{} has no row", path.display())))?;
    let mut fields = row.split(',');
    let hash = fields.next().unwrap_or_default().to_string();
    let loss = fields.next().unwrap_or_default().to_string();
    Ok((hash, loss))
}

pub(super) fn ablate(run: &Run, axes: &[Axis], steps: usize) -> Result<i32> {
    let cells = ablation_cells(&run.config, axes)?;
    let dirs: Vec<_> = (0..cells.len()).map(|i| run.out.join("cells").join(format!("{i:02}"))).collect();
    let outcomes: Vec<Result<i32>> = std::thread::scope(|scope| {
        let handles: Vec<_> = cells
            .iter()
            .zip(&dirs)
            .map(|(cell, dir)| scope.spawn(move || execute(&Command::Probe { steps }, &cell.config, dir)))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().unwrap_or_else(|_| Err(CliError::Check("ablation cell panicked".into()))))
            .collect()
    });
    let mut csv = format!("{ABLATION_CSV_HEADER}\n");
    let mut hashes: Vec<(String, usize)> = Vec::new();
    let mut failed = Vec::new();
    for (i, ((cell, dir), outcome)) in cells.iter().zip(&dirs).zip(outcomes).enumerate() {
        if outcome? != 0 {
            failed.push(format!("cell {i:02} exited nonzero"));
        }
        let (hash, loss) = probe_result(dir)?;
        csv.push_str(&format!(
            "{i:02},{},{},{},{},{hash},{loss}\n",
            cell.label(Axis::Combine),
            cell.label(Axis::Attention),
            cell.label(Axis::Sampling),
            cell.label(Axis::Modules)
        ));
        if let Some((_, j)) = hashes.iter().find(|(h, _)| *h == hash) {
            failed.push(format!("cells {j:02} and {i:02} produce identical outputs"));
        }
        hashes.push((hash, i));
    }
    run.result("ablation.csv", csv.as_bytes())?;
    super::report_failures("ablation liveness", &failed)
}
