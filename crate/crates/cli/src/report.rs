// SPDX-License-Identifier: MIT OR Apache-2.0

//! Consolidates the per-experiment reports into `summary.json` and a
//! plain-text `summary.txt`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use modepatch::data::Mode;
use modepatch::intervene::Direction;
use modepatch::model::TapSite;
use serde::{Deserialize, Serialize};

use crate::artifacts::{read_report, report_path, write_bytes, write_report, REPORT_KINDS, REPORT_SCHEMA_VERSION};
use crate::error::{CliError, Result};
use crate::records::*;

/// Command that produces each report kind.
fn producer(kind: &str) -> &'static str {
    match kind {
        "train" => "train",
        "baseline" => "eval-baseline",
        "patch" => "patch",
        "interpolate" => "interpolate",
        "localize" => "localize",
        "trace" => "trace",
        "scrub" => "scrub",
        "neuron_sweep" => "neuron-sweep",
        "saturation" => "saturate",
        "winners" => "winners",
        _ => "run-all",
    }
}

/// Most beneficial neurons of one sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub direction: Direction,
    pub site: TapSite,
    pub n_keys: usize,
    /// `(neuron, mean ΔPCC)` of the five best neurons.
    pub top: Vec<(usize, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SaturationSummary {
    pub direction: Direction,
    pub site: TapSite,
    pub argmax_k: usize,
    pub max_rel_k1: f64,
    pub last_rel_k1: f64,
    pub k_grid: Vec<usize>,
    pub delta_pcc_rel_k1: Vec<f64>,
}

/// Everything the summary shows; absent kinds are `None`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub train: Option<TrainReport>,
    pub baseline: Option<BaselineReport>,
    pub patch: Option<Vec<PatchRow>>,
    pub interpolate: Option<Vec<InterpRow>>,
    pub localize: Option<LocalizeReport>,
    pub trace: Option<Vec<TraceRecord>>,
    pub scrub: Option<ScrubReport>,
    pub neuron_sweep: Option<Vec<SweepSummary>>,
    pub saturation: Option<Vec<SaturationSummary>>,
    pub winners: Option<Vec<WinnerRecord>>,
}

fn load<T: serde::de::DeserializeOwned>(out: &Path, kind: &str) -> Result<Option<T>> {
    if report_path(out, kind).exists() {
        read_report(out, kind, producer(kind)).map(Some)
    } else {
        Ok(None)
    }
}

pub fn collect(out: &Path) -> Result<Summary> {
    let sweeps: Option<SweepReport> = load(out, "neuron_sweep")?;
    let saturation: Option<SaturationReport> = load(out, "saturation")?;
    let s = Summary {
        train: load(out, "train")?,
        baseline: load(out, "baseline")?,
        patch: load(out, "patch")?,
        interpolate: load(out, "interpolate")?,
        localize: load(out, "localize")?,
        trace: load(out, "trace")?,
        scrub: load(out, "scrub")?,
        neuron_sweep: sweeps
            .map(|v| {
                v.iter()
                    .map(|s| {
                        let r = s.ranked()?;
                        Ok(SweepSummary {
                            direction: s.direction,
                            site: s.site,
                            n_keys: s.keys.len(),
                            top: r.effects.iter().take(5).map(|e| (e.neuron, e.delta_pcc)).collect(),
                        })
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .transpose()?,
        saturation: saturation.map(|v| {
            v.iter()
                .map(|c| {
                    let i = c
                        .k_grid
                        .iter()
                        .position(|&k| k == c.argmax_k())
                        .expect("argmax on grid");
                    SaturationSummary {
                        direction: c.direction,
                        site: c.site,
                        argmax_k: c.argmax_k(),
                        max_rel_k1: c.delta_pcc_rel_k1[i],
                        last_rel_k1: *c.delta_pcc_rel_k1.last().expect("non-empty grid"),
                        k_grid: c.k_grid.clone(),
                        delta_pcc_rel_k1: c.delta_pcc_rel_k1.clone(),
                    }
                })
                .collect()
        }),
        winners: load(out, "winners")?,
    };
    if s == Summary::default() {
        return Err(CliError::Missing {
            path: out.to_path_buf(),
            hint: format!(
                "no experiment reports found; expected at least one of {}",
                REPORT_KINDS.map(|k| format!("{k}.json")).join(", ")
            ),
        });
    }
    Ok(s)
}

/// Writes `summary.json` and `summary.txt`. Output depends only on the
/// report files, so repeated runs are byte-identical.
pub fn report(out: &Path) -> Result<Summary> {
    if !out.is_dir() {
        return Err(CliError::Missing {
            path: out.to_path_buf(),
            hint: "output directory does not exist; run an experiment first".into(),
        });
    }
    let s = collect(out)?;
    write_report(out, "summary", &s)?;
    write_bytes(&out.join("summary.txt"), render(&s).as_bytes())?;
    Ok(s)
}

fn table(title: &str, header: &[&str], rows: &[Vec<String>]) -> String {
    let mut width: Vec<usize> = header.iter().map(|h| h.chars().count()).collect();
    for r in rows {
        for (w, c) in width.iter_mut().zip(r) {
            *w = (*w).max(c.chars().count());
        }
    }
    let line = |cells: Vec<&str>| -> String {
        let mut s = String::new();
        for (i, (c, w)) in cells.iter().zip(&width).enumerate() {
            if i > 0 {
                s.push_str("  ");
            }
            if i == 0 {
                let _ = write!(s, "{c:<w$}");
            } else {
                let _ = write!(s, "{c:>w$}");
            }
        }
        s.trim_end().to_owned() + "\n"
    };
    let mut s = format!("{title}\n");
    s += &line(header.to_vec());
    s += &line(
        width
            .iter()
            .map(|&w| "-".repeat(w))
            .collect::<Vec<_>>()
            .iter()
            .map(|x| x.as_str())
            .collect(),
    );
    for r in rows {
        s += &line(r.iter().map(|c| c.as_str()).collect());
    }
    s + "\n"
}

fn f4(v: f64) -> String {
    format!("{v:.4}")
}

fn signed(v: f64) -> String {
    format!("{v:+.4}")
}

/// Plain-text tables of every present section.
pub fn render(s: &Summary) -> String {
    let mut out = format!("modepatch summary (report schema {REPORT_SCHEMA_VERSION})\n\n");
    if let Some(t) = &s.train {
        let loss = |v: Option<f64>| v.map_or("-".to_owned(), |l| format!("{l:.6}"));
        out += &table(
            "Training",
            &["keys", "epochs", "steps", "first loss", "final loss"],
            &[vec![
                t.train_keys.to_string(),
                t.epochs.to_string(),
                t.steps.to_string(),
                loss(t.first_loss),
                loss(t.final_loss),
            ]],
        );
    }
    if let Some(b) = &s.baseline {
        let rows: Vec<Vec<String>> = Mode::ALL
            .iter()
            .filter_map(|m| b.modes.get(m.name()).map(|r| (m, r)))
            .map(|(m, r)| {
                vec![
                    m.name().to_owned(),
                    f4(r.pcc_concat),
                    format!("{:.4} ± {:.4}", r.pcc_per_sample_mean, r.pcc_per_sample_sd),
                    format!("{:.2} ± {:.2}", r.mcd_mean, r.mcd_sd),
                    f4(r.dtw_pcc_mean),
                ]
            })
            .collect();
        out += &table(
            &format!("Baseline decoding ({} held-out keys)", b.keys.len()),
            &["mode", "PCC (concat)", "PCC (per-sample)", "MCD", "DTW-PCC"],
            &rows,
        );
    }
    if let Some(p) = &s.patch {
        let rows: Vec<Vec<String>> = p
            .iter()
            .map(|r| {
                vec![
                    r.direction.to_string(),
                    r.site.to_string(),
                    f4(r.baseline_pcc),
                    f4(r.pcc),
                    signed(r.delta_pcc),
                    format!("{:.2}", r.mcd),
                    format!("{:+.2}", r.delta_mcd),
                ]
            })
            .collect();
        out += &table(
            "Full activation patching",
            &["direction", "site", "base PCC", "PCC", "ΔPCC", "MCD", "ΔMCD"],
            &rows,
        );
    }
    if let Some(rows) = &s.interpolate {
        let mut groups: BTreeMap<(Direction, TapSite), Vec<&InterpRow>> = BTreeMap::new();
        for r in rows {
            groups.entry((r.direction, r.site)).or_default().push(r);
        }
        let alphas: Vec<String> = groups
            .values()
            .next()
            .map(|g| g.iter().map(|r| format!("α={}", r.alpha)).collect())
            .unwrap_or_default();
        let mut header = vec!["direction", "site"];
        header.extend(alphas.iter().map(|a| a.as_str()));
        let body: Vec<Vec<String>> = groups
            .iter()
            .map(|((d, site), g)| {
                let mut r = vec![d.to_string(), site.to_string()];
                r.extend(g.iter().map(|x| f4(x.pcc)));
                r
            })
            .collect();
        out += &table("Interpolation (PCC)", &header, &body);
    }
    if let Some(l) = &s.localize {
        let rows: Vec<Vec<String>> = l
            .coarse
            .iter()
            .map(|c| {
                let mut r = vec![c.direction.to_string()];
                r.extend(c.conv.iter().chain(&c.rnn).map(|e| signed(e.delta_pcc)));
                r.push(c.best_conv_group().label.clone());
                r
            })
            .collect();
        let labels: Vec<String> = l
            .coarse
            .first()
            .map(|c| c.conv.iter().chain(&c.rnn).map(|e| e.label.clone()).collect())
            .unwrap_or_default();
        let mut header = vec!["direction"];
        header.extend(labels.iter().map(|s| s.as_str()));
        header.push("best group");
        out += &table("Coarse localization (ΔPCC)", &header, &rows);
        let rows: Vec<Vec<String>> = l
            .topk
            .iter()
            .flat_map(|c| {
                c.k_grid.iter().enumerate().map(move |(i, &k)| {
                    vec![
                        c.direction.to_string(),
                        format!("[{}, {})", c.base_group.0, c.base_group.1),
                        k.to_string(),
                        signed(c.ranked[i]),
                        format!("{} ± {:.4}", signed(c.random_mean[i]), c.random_sd[i]),
                    ]
                })
            })
            .collect();
        out += &table(
            "Ranked top-k conv subgroups vs random-k (ΔPCC)",
            &["direction", "group", "k", "ranked", "random"],
            &rows,
        );
    }
    if let Some(t) = &s.trace {
        let rows: Vec<Vec<String>> = t
            .iter()
            .map(|r| {
                vec![
                    r.direction.to_string(),
                    r.site.to_string(),
                    format!("[{}, {})", r.window.0, r.window.1),
                    signed(r.delta_pcc),
                    format!("{:+.2}", r.delta_mcd),
                ]
            })
            .collect();
        out += &table(
            "Sliding-window patching",
            &["direction", "site", "window", "ΔPCC", "ΔMCD"],
            &rows,
        );
    }
    if let Some(sc) = &s.scrub {
        let mut by_dir: BTreeMap<Direction, Vec<&modepatch::intervene::ScrubResult>> = BTreeMap::new();
        for r in sc {
            by_dir.entry(r.direction).or_default().push(r);
        }
        let labels: Vec<&str> = by_dir
            .values()
            .next()
            .map(|v| v.iter().map(|r| r.variant.label()).collect())
            .unwrap_or_default();
        let mut header = vec!["direction"];
        header.extend(labels.iter().copied());
        let rows: Vec<Vec<String>> = by_dir
            .iter()
            .map(|(d, v)| {
                let mut r = vec![d.to_string()];
                r.extend(v.iter().map(|x| f4(x.pcc)));
                r
            })
            .collect();
        out += &table("Causal scrubbing (PCC)", &header, &rows);
    }
    if let Some(n) = &s.neuron_sweep {
        let rows: Vec<Vec<String>> = n
            .iter()
            .map(|x| {
                vec![
                    x.direction.to_string(),
                    x.site.to_string(),
                    x.top
                        .iter()
                        .map(|(i, v)| format!("{i}:{v:+.4}"))
                        .collect::<Vec<_>>()
                        .join(" "),
                ]
            })
            .collect();
        out += &table(
            "Single-neuron patching (top 5, mean ΔPCC)",
            &["direction", "site", "neurons"],
            &rows,
        );
    }
    if let Some(sat) = &s.saturation {
        let rows: Vec<Vec<String>> = sat
            .iter()
            .map(|x| {
                vec![
                    x.direction.to_string(),
                    x.site.to_string(),
                    x.argmax_k.to_string(),
                    signed(x.max_rel_k1),
                    signed(x.last_rel_k1),
                ]
            })
            .collect();
        out += &table(
            "Top-k neuron saturation (ΔPCC relative to k = 1)",
            &["direction", "site", "k*", "at k*", "at max k"],
            &rows,
        );
    }
    if let Some(w) = &s.winners {
        let rows: Vec<Vec<String>> = w
            .iter()
            .map(|x| {
                vec![
                    x.direction.to_string(),
                    x.site.to_string(),
                    x.stats.n_sentences.to_string(),
                    x.stats.n_unique.to_string(),
                    format!("{:.2}", x.stats.top1_coverage_pct),
                    format!("{:.2}", x.stats.top5_coverage_pct),
                    format!("{:.2}", x.stats.entropy_bits),
                ]
            })
            .collect();
        out += &table(
            "Winner neurons",
            &[
                "direction",
                "site",
                "sentences",
                "unique",
                "top-1 (%)",
                "top-5 (%)",
                "entropy (bits)",
            ],
            &rows,
        );
    }
    out
}
