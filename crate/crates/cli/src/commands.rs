// SPDX-License-Identifier: MIT OR Apache-2.0

//! One function per subcommand. Each reads its inputs from the output
//! directory, writes its reports there and refreshes the manifest.

use std::path::PathBuf;

use log::info;
use modepatch::analysis::{coverage_curve, saturation, winner_frequencies, winner_stats};
use modepatch::data::{generate, load_dataset, save_dataset, PairedSet};
use modepatch::intervene::{
    coarse_localize, mean_score, patch_full, patch_interpolate, rank_subgroups_topk, scrub_dataset,
    single_neuron_sweep, sliding_window_trace, sliding_windows, sliding_windows_stride, TraceBank,
};
use modepatch::metrics::evaluate;
use modepatch::model::{train, ModelWeights};
use modepatch::tensor::RngStream;

use crate::artifacts::{read_report, write_csv, write_report, DATASET_DIR, LOSS_FILE, WEIGHTS_FILE};
use crate::config::RunConfig;
use crate::error::{CliError, Result};
use crate::records::*;

/// A config bound to its output directory.
pub struct Run {
    pub cfg: RunConfig,
    pub out: PathBuf,
}

impl Run {
    pub fn new(cfg: RunConfig, out: impl Into<PathBuf>) -> Self {
        Self { cfg, out: out.into() }
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.out.join(rel)
    }

    /// The stored dataset; it must have been generated from this config.
    pub fn dataset(&self) -> Result<PairedSet> {
        let dir = self.path(DATASET_DIR);
        if !dir.is_dir() {
            return Err(CliError::Missing {
                path: dir,
                hint: "run `gen-data` first".into(),
            });
        }
        let set = load_dataset(&dir)?;
        if set.gen_config() != &self.cfg.gen {
            return Err(CliError::config(format!(
                "{} was generated with different settings; rerun `gen-data`",
                dir.display()
            )));
        }
        Ok(set)
    }

    pub fn weights(&self) -> Result<ModelWeights> {
        let path = self.path(WEIGHTS_FILE);
        if !path.exists() {
            return Err(CliError::Missing {
                path,
                hint: "run `train` first".into(),
            });
        }
        Ok(ModelWeights::load(&path, &self.cfg.model)?)
    }

    /// Weights and traces of every held-out key in every mode.
    pub fn bank(&self) -> Result<(ModelWeights, TraceBank)> {
        let w = self.weights()?;
        let eval = self.dataset()?.eval_split()?;
        let bank = TraceBank::build(&w, &eval)?;
        Ok((w, bank))
    }
}

pub fn gen_data(run: &Run) -> Result<()> {
    let set = generate(&run.cfg.gen)?;
    let dir = run.path(DATASET_DIR);
    if dir.exists() {
        std::fs::remove_dir_all(&dir).map_err(|e| CliError::io(format!("clearing {}", dir.display()), e))?;
    }
    save_dataset(&set, &dir)?;
    info!("wrote {} keys to {}", set.len(), dir.display());
    Ok(())
}

pub fn train_cmd(run: &Run) -> Result<()> {
    let set = run.dataset()?.train_split()?;
    let init_seed = run.cfg.seed_for("init");
    let w0 = ModelWeights::init(&run.cfg.model, &mut RngStream::new(init_seed, 0))?;
    info!("training on {} keys for {} epochs", set.len(), run.cfg.train.epochs);
    let outcome = train(&w0, &set.samples(), &run.cfg.train)?;
    outcome.weights.save(&run.path(WEIGHTS_FILE))?;
    let rows: Vec<LossRow> = outcome
        .losses
        .iter()
        .map(|p| LossRow {
            step: p.step,
            epoch: p.epoch,
            loss: p.loss,
        })
        .collect();
    write_csv(&run.path(LOSS_FILE), &rows)?;
    write_report(
        &run.out,
        "train",
        &TrainReport {
            epochs: run.cfg.train.epochs,
            steps: rows.len(),
            train_keys: set.len(),
            init_seed,
            shuffle_seed: run.cfg.train.seed,
            first_loss: rows.first().map(|r| r.loss),
            final_loss: rows.last().map(|r| r.loss),
        },
    )?;
    Ok(())
}

pub fn eval_baseline(run: &Run) -> Result<()> {
    let (_, bank) = run.bank()?;
    let targets: Vec<_> = (0..bank.len()).map(|k| bank.target(k).clone()).collect();
    let mut modes = std::collections::BTreeMap::new();
    for m in modepatch::data::Mode::ALL {
        let preds: Vec<_> = (0..bank.len()).map(|k| bank.trace(k, m).mel_pred.clone()).collect();
        let r = evaluate(&preds, &targets)?;
        info!("{m}: per-sample PCC {:.4}", r.pcc_per_sample_mean);
        modes.insert(m.name().to_owned(), r);
    }
    write_report(
        &run.out,
        "baseline",
        &BaselineReport {
            keys: bank.keys().to_vec(),
            modes,
        },
    )?;
    Ok(())
}

pub fn patch(run: &Run) -> Result<()> {
    let (w, bank) = run.bank()?;
    let x = &run.cfg.experiments;
    let mut rows = Vec::new();
    let mut key_rows = Vec::new();
    for &dir in &x.directions {
        let base = bank.baseline_mean(dir.target);
        for &site in &x.sites {
            let scores = bank.deltas(dir, |_, r, d| patch_full(&w, r, d, site))?;
            for (key, s) in bank.keys().iter().zip(&scores) {
                key_rows.push(PatchKeyRow {
                    direction: dir,
                    site,
                    key: key.clone(),
                    delta_pcc: s.pcc,
                    delta_mcd: s.mcd,
                });
            }
            let m = mean_score(&scores);
            rows.push(PatchRow {
                direction: dir,
                site,
                baseline_pcc: base.pcc,
                baseline_mcd: base.mcd,
                pcc: base.pcc + m.pcc,
                mcd: base.mcd + m.mcd,
                delta_pcc: m.pcc,
                delta_mcd: m.mcd,
            });
        }
    }
    write_csv(&run.path("patch.csv"), &key_rows)?;
    write_report(&run.out, "patch", &rows)?;
    Ok(())
}

pub fn interpolate(run: &Run) -> Result<()> {
    let (w, bank) = run.bank()?;
    let x = &run.cfg.experiments;
    let mut rows = Vec::new();
    for &dir in &x.directions {
        let base = bank.baseline_mean(dir.target);
        for &site in &x.sites {
            for &alpha in &x.alpha_grid {
                let m = mean_score(&bank.deltas(dir, |_, r, d| patch_interpolate(&w, r, d, site, alpha))?);
                rows.push(InterpRow {
                    direction: dir,
                    site,
                    alpha,
                    pcc: base.pcc + m.pcc,
                    delta_pcc: m.pcc,
                    delta_mcd: m.mcd,
                });
            }
        }
    }
    write_csv(&run.path("interpolate.csv"), &rows)?;
    write_report(&run.out, "interpolate", &rows)?;
    Ok(())
}

pub fn localize(run: &Run) -> Result<()> {
    let (w, bank) = run.bank()?;
    let x = &run.cfg.experiments;
    let k_grid = run.cfg.localize_k_grid();
    let seed = run.cfg.seed_for("localize");
    let mut report = LocalizeReport {
        coarse: Vec::new(),
        topk: Vec::new(),
    };
    let mut region_rows = Vec::new();
    let mut topk_rows = Vec::new();
    for &dir in &x.directions {
        let coarse = coarse_localize(&w, &bank, dir)?;
        let best = coarse.best_conv_group();
        let curves = rank_subgroups_topk(
            &w,
            &bank,
            dir,
            modepatch::model::TapSite::ConvOut,
            (best.lo, best.hi),
            x.localize.subgroup_size,
            &k_grid,
            x.localize.n_random,
            seed,
        )?;
        for e in coarse.conv.iter().chain(&coarse.rnn) {
            region_rows.push(RegionRow {
                direction: dir,
                site: e.site,
                region: e.label.clone(),
                lo: e.lo,
                hi: e.hi,
                delta_pcc: e.delta_pcc,
                delta_pcc_sd: e.delta_pcc_sd,
                delta_mcd: e.delta_mcd,
            });
        }
        for (i, &k) in curves.k_grid.iter().enumerate() {
            topk_rows.push(TopkRow {
                direction: dir,
                base_lo: curves.base_group.0,
                base_hi: curves.base_group.1,
                k,
                channels: k * curves.subgroup_size,
                ranked: curves.ranked[i],
                ranked_sd: curves.ranked_sd[i],
                random_mean: curves.random_mean[i],
                random_sd: curves.random_sd[i],
            });
        }
        report.coarse.push(coarse);
        report.topk.push(curves);
    }
    write_csv(&run.path("localize_regions.csv"), &region_rows)?;
    write_csv(&run.path("localize_topk.csv"), &topk_rows)?;
    write_report(&run.out, "localize", &report)?;
    Ok(())
}

pub fn trace(run: &Run) -> Result<()> {
    let (w, bank) = run.bank()?;
    let x = &run.cfg.experiments;
    let t = &x.trace;
    let frames = run.cfg.frames();
    let windows = match t.stride_frac {
        Some(s) => sliding_windows_stride(frames, t.window_frac, s)?,
        None => sliding_windows(frames, t.window_frac, t.positions)?,
    };
    let mut records = Vec::new();
    let mut rows = Vec::new();
    for &dir in &x.directions {
        let base = bank.baseline_mean(dir.target);
        for e in sliding_window_trace(&w, &bank, dir, t.site, &windows)? {
            rows.push(TraceRow {
                direction: dir,
                site: t.site,
                start: e.start,
                end: e.end,
                delta_pcc: e.delta_pcc,
                delta_mcd: e.delta_mcd,
            });
            records.push(TraceRecord {
                window: (e.start, e.end),
                direction: dir,
                site: t.site,
                pcc: base.pcc + e.delta_pcc,
                mcd: base.mcd + e.delta_mcd,
                delta_pcc: e.delta_pcc,
                delta_mcd: e.delta_mcd,
                seed: run.cfg.seed,
            });
        }
    }
    write_csv(&run.path("trace.csv"), &rows)?;
    write_report(&run.out, "trace", &records)?;
    Ok(())
}

pub fn scrub(run: &Run) -> Result<()> {
    let (w, bank) = run.bank()?;
    let x = &run.cfg.experiments;
    let seed = run.cfg.seed_for("scrub");
    let mut results: ScrubReport = Vec::new();
    for &dir in &x.directions {
        results.extend(scrub_dataset(
            &w,
            &bank,
            dir,
            &x.scrub.variants,
            &run.cfg.scrub_config(),
            seed,
        )?);
    }
    let rows: Vec<ScrubRow> = results
        .iter()
        .map(|r| ScrubRow {
            direction: r.direction,
            variant: r.variant.label().to_owned(),
            pcc: r.pcc,
            mcd: r.mcd,
            delta_pcc: r.delta_pcc,
            delta_mcd: r.delta_mcd,
            seed: r.seed,
        })
        .collect();
    write_csv(&run.path("scrub.csv"), &rows)?;
    write_report(&run.out, "scrub", &results)?;
    Ok(())
}

pub fn neuron_sweep(run: &Run) -> Result<()> {
    let (w, bank) = run.bank()?;
    let x = &run.cfg.experiments;
    let mut sweeps: SweepReport = Vec::new();
    let mut rows = Vec::new();
    for &dir in &x.directions {
        for &site in &x.neurons.sites {
            let s = single_neuron_sweep(&w, &bank, dir, site)?;
            for (n, (pcc, mcd)) in s.delta_pcc.iter().zip(&s.delta_mcd).enumerate() {
                for (k, key) in s.keys.iter().enumerate() {
                    rows.push(SweepRow {
                        direction: dir,
                        layer: site,
                        neuron: n,
                        key: key.clone(),
                        delta_pcc: pcc[k],
                        delta_mcd: mcd[k],
                    });
                }
            }
            sweeps.push(s);
        }
    }
    write_csv(&run.path("neuron_sweep.csv"), &rows)?;
    write_report(&run.out, "neuron_sweep", &sweeps)?;
    Ok(())
}

fn load_sweeps(run: &Run) -> Result<SweepReport> {
    read_report(&run.out, "neuron_sweep", "neuron-sweep")
}

pub fn saturate(run: &Run) -> Result<()> {
    let sweeps = load_sweeps(run)?;
    let (w, bank) = run.bank()?;
    let mut curves: SaturationReport = Vec::new();
    let mut rows = Vec::new();
    for s in &sweeps {
        if s.keys != bank.keys() {
            return Err(CliError::config(
                "neuron_sweep.json covers different keys; rerun `neuron-sweep`",
            ));
        }
        let ranked = s.ranked()?;
        let k_grid = run.cfg.neuron_k_grid(s.site);
        let c = saturation(
            &w,
            &bank,
            s.direction,
            &ranked,
            &k_grid,
            run.cfg.experiments.neurons.folds,
        )?;
        for (i, &k) in c.k_grid.iter().enumerate() {
            rows.push(SaturationRow {
                direction: c.direction,
                site: c.site,
                k,
                delta_pcc_rel_k1: c.delta_pcc_rel_k1[i],
                sem: c.sem[i],
                delta_pcc: c.delta_pcc[i],
            });
        }
        info!("{} {}: saturation peaks at k = {}", c.direction, c.site, c.argmax_k());
        curves.push(c);
    }
    write_csv(&run.path("saturation.csv"), &rows)?;
    write_report(&run.out, "saturation", &curves)?;
    Ok(())
}

pub fn winners(run: &Run) -> Result<()> {
    let sweeps = load_sweeps(run)?;
    let mut records = Vec::new();
    let mut rows = Vec::new();
    for s in &sweeps {
        let stats = winner_stats(&s.winners)?;
        let frequencies = winner_frequencies(&s.winners);
        let ranking: Vec<usize> = frequencies.iter().map(|&(n, _)| n).collect();
        let coverage_k: Vec<usize> = (1..=stats.n_unique).collect();
        let coverage = coverage_curve(&s.winners, &ranking, &coverage_k)?;
        for (&k, &c) in coverage_k.iter().zip(&coverage) {
            rows.push(CoverageRow {
                direction: s.direction,
                site: s.site,
                k,
                coverage: c,
            });
        }
        records.push(WinnerRecord {
            direction: s.direction,
            site: s.site,
            stats,
            frequencies,
            coverage_k,
            coverage,
        });
    }
    write_csv(&run.path("winners.csv"), &rows)?;
    write_report(&run.out, "winners", &records)?;
    Ok(())
}

/// Every command in pipeline order, ending with the report.
pub fn run_all(run: &Run) -> Result<()> {
    for (name, f) in PIPELINE {
        info!("== {name}");
        f(run)?;
    }
    crate::report::report(&run.out)?;
    Ok(())
}

type Step = fn(&Run) -> Result<()>;

pub const PIPELINE: [(&str, Step); 11] = [
    ("gen-data", gen_data),
    ("train", train_cmd),
    ("eval-baseline", eval_baseline),
    ("patch", patch),
    ("interpolate", interpolate),
    ("localize", localize),
    ("trace", trace),
    ("scrub", scrub),
    ("neuron-sweep", neuron_sweep),
    ("saturate", saturate),
    ("winners", winners),
];
