//! Stand-alone matplotlib scripts for result CSV files.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum PlotError {
    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: io::Error },
    #[error("cannot write {path}: {source}")]
    Write { path: PathBuf, source: io::Error },
    #[error("{0} has no data rows")]
    Empty(PathBuf),
    #[error("{path}: unrecognized column layout `{header}`")]
    Layout { path: PathBuf, header: String },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Layout {
    Trajectory,
    Fringe,
    Decay,
    Spectrum,
    Crossing,
    Chi,
    Chain,
}

impl Layout {
    pub fn detect(header: &str) -> Option<Self> {
        let cols: Vec<&str> = header.trim().split(',').collect();
        let scan_tail = ["p_model", "counts", "shots"];
        match cols.as_slice() {
            ["time", rest @ ..] if !rest.is_empty() && rest.iter().all(|c| c.starts_with("P_") || c.contains("_rho_")) => {
                Some(Self::Trajectory)
            }
            [x, tail @ ..] if tail == scan_tail => match *x {
                "phi_rad" => Some(Self::Fringe),
                "wait_us" => Some(Self::Decay),
                "delta_p_MHz" => Some(Self::Spectrum),
                _ => None,
            },
            ["delta_s_MHz", "delta_p_MHz", "p_model", "ridge_lo_MHz", "ridge_hi_MHz"] => Some(Self::Crossing),
            ["row", "col", "re_chi", "im_chi"] => Some(Self::Chi),
            ["step", "walker", .., "log_posterior"] if cols.len() > 3 => Some(Self::Chain),
            _ => None,
        }
    }
}

const PRELUDE: &str = r#"import csv
import os

import matplotlib.pyplot as plt

HERE = os.path.dirname(os.path.abspath(__file__))


def load(name):
    with open(os.path.join(HERE, name), newline="") as f:
        rows = list(csv.DictReader(f))
    return {k: [float(r[k]) if r[k] != "" else None for r in rows] for k in rows[0]}


"#;

fn body(layout: Layout) -> &'static str {
    match layout {
        Layout::Trajectory => {
            r#"fig, ax = plt.subplots()
for key in d:
    if key.startswith("P_"):
        ax.plot(d["time"], d[key], label=key[2:])
ax.set_xlabel("time (us)")
ax.set_ylabel("population")
ax.legend()
fig.tight_layout()
"#
        }
        Layout::Fringe | Layout::Decay | Layout::Spectrum => {
            r#"x_key = list(d)[0]
fig, ax = plt.subplots()
ax.plot(d[x_key], d["p_model"], "-", label="model")
if all(c is not None for c in d["counts"]):
    ax.plot(d[x_key], [c / n for c, n in zip(d["counts"], d["shots"])], "o", label="simulated counts")
ax.set_xlabel(XLABEL)
ax.set_ylabel(YLABEL)
ax.legend()
fig.tight_layout()
"#
        }
        Layout::Crossing => {
            r#"ds = sorted(set(d["delta_s_MHz"]))
dp = sorted(set(d["delta_p_MHz"]))
grid = [[0.0] * len(dp) for _ in ds]
lo, hi = [0.0] * len(ds), [0.0] * len(ds)
for s, p, v, a, b in zip(d["delta_s_MHz"], d["delta_p_MHz"], d["p_model"], d["ridge_lo_MHz"], d["ridge_hi_MHz"]):
    i, j = ds.index(s), dp.index(p)
    grid[i][j] = v
    lo[i], hi[i] = a, b
fig, ax = plt.subplots()
mesh = ax.pcolormesh(dp, ds, grid, shading="nearest")
fig.colorbar(mesh, ax=ax, label="excitation probability")
ax.plot(lo, ds, "k-", lw=1)
ax.plot(hi, ds, "k-", lw=1)
ax.set_xlabel("pump detuning (MHz)")
ax.set_ylabel("Stokes detuning (MHz)")
fig.tight_layout()
"#
        }
        Layout::Chi => {
            r#"labels = ["I", "X", "Y", "Z"]
fig, axes = plt.subplots(1, 2, figsize=(9, 4), layout="constrained")
for ax, key, title in zip(axes, ["re_chi", "im_chi"], ["Re chi", "Im chi"]):
    m = [[0.0] * 4 for _ in range(4)]
    for r, c, v in zip(d["row"], d["col"], d[key]):
        m[int(r)][int(c)] = v
    im = ax.imshow(m, vmin=-1, vmax=1, cmap="RdBu")
    ax.set_xticks(range(4), labels)
    ax.set_yticks(range(4), labels)
    ax.set_title(title)
fig.colorbar(im, ax=axes)
"#
        }
        Layout::Chain => {
            r#"names = [k for k in d if k not in ("step", "walker", "log_posterior")]
fig, axes = plt.subplots(len(names), 1, sharex=True, squeeze=False)
for ax, name in zip(axes[:, 0], names):
    ax.plot(d["step"], d[name], ",", alpha=0.3)
    ax.set_ylabel(name)
axes[-1, 0].set_xlabel("step")
fig.tight_layout()
"#
        }
    }
}

fn labels(layout: Layout) -> (&'static str, &'static str) {
    match layout {
        Layout::Fringe => ("Stokes phase (rad)", "P(|0>)"),
        Layout::Decay => ("wait (us)", "P(|0>)"),
        Layout::Spectrum => ("pump detuning (MHz)", "excitation probability"),
        _ => ("", ""),
    }
}

/// Script text for `csv_name` with the given layout.
pub fn script_for(layout: Layout, csv_name: &str) -> String {
    let (xl, yl) = labels(layout);
    let png = Path::new(csv_name).with_extension("png");
    format!(
        "{PRELUDE}XLABEL = {xl:?}\nYLABEL = {yl:?}\nd = load({csv_name:?})\n{}fig.savefig(os.path.join(HERE, {:?}))\nplt.show()\n",
        body(layout),
        png.display().to_string()
    )
}

/// Writes `<stem>.py` next to the CSV and returns its path.
pub fn emit_plot_script(csv: &Path) -> Result<PathBuf, PlotError> {
    let text = fs::read_to_string(csv).map_err(|source| PlotError::Read { path: csv.to_path_buf(), source })?;
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines.next().ok_or_else(|| PlotError::Empty(csv.to_path_buf()))?;
    let layout = Layout::detect(header)
        .ok_or_else(|| PlotError::Layout { path: csv.to_path_buf(), header: header.to_string() })?;
    if lines.next().is_none() {
        return Err(PlotError::Empty(csv.to_path_buf()));
    }
    let name = csv.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let out = csv.with_extension("py");
    fs::write(&out, script_for(layout, &name)).map_err(|source| PlotError::Write { path: out.clone(), source })?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layouts_are_recognized() {
        assert_eq!(Layout::detect("phi_rad,p_model,counts,shots"), Some(Layout::Fringe));
        assert_eq!(Layout::detect("wait_us,p_model,counts,shots"), Some(Layout::Decay));
        assert_eq!(Layout::detect("delta_p_MHz,p_model,counts,shots"), Some(Layout::Spectrum));
        assert_eq!(
            Layout::detect("delta_s_MHz,delta_p_MHz,p_model,ridge_lo_MHz,ridge_hi_MHz"),
            Some(Layout::Crossing)
        );
        assert_eq!(Layout::detect("time,P_0,P_e,P_r,re_rho_0r,im_rho_0r"), Some(Layout::Trajectory));
        assert_eq!(Layout::detect("row,col,re_chi,im_chi"), Some(Layout::Chi));
        assert_eq!(Layout::detect("step,walker,A,tau,log_posterior"), Some(Layout::Chain));
        assert_eq!(Layout::detect("a,b,c"), None);
        assert_eq!(Layout::detect("time"), None);
    }

    #[test]
    fn crossing_script_draws_stark_curves() {
        let s = script_for(Layout::Crossing, "map.csv");
        assert!(s.contains("pcolormesh"));
        assert!(s.contains("ax.plot(lo, ds, \"k-\""));
        assert!(s.contains("load(\"map.csv\")"));
    }
}
