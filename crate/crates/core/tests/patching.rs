// SPDX-License-Identifier: MIT OR Apache-2.0

use std::collections::BTreeMap;

use modepatch::intervene::{
    causal_scrub, conv_groups, hybrid, neuron_patch, patch_full, patch_interpolate, patch_region, rank_neurons,
    rnn_thirds, topk_neuron_patch, FracRange, NeuronEffect, RankedNeurons, RegionKind, RegionMask, ScrubConfig,
    ScrubVariant,
};
use modepatch::model::{forward, resume, ForwardTrace, Hooks, ModelConfig, ModelWeights, TapSite};
use modepatch::tensor::{RngStream, Tensor};
use proptest::prelude::*;

const SITES: [TapSite; 3] = [TapSite::ConvOut, TapSite::RnnLayer(0), TapSite::RnnOut];

fn tiny() -> ModelConfig {
    ModelConfig {
        in_channels: 3,
        conv_channels: 8,
        kernel: 4,
        stride: 4,
        padding: 2,
        rnn_hidden: 3,
        rnn_layers: 2,
        mel_bins: 5,
    }
}

/// Weights plus recipient, donor and filler traces of the same length.
fn setup(seed: u64, t_in: usize) -> (ModelWeights, [ForwardTrace; 3]) {
    let cfg = tiny();
    let mut rng = RngStream::new(seed, 0);
    let w = ModelWeights::init(&cfg, &mut rng).unwrap();
    let mut trace = || {
        let x = Tensor::new(vec![cfg.in_channels, t_in], rng.draw_normal(cfg.in_channels * t_in)).unwrap();
        forward(&w, &x, &Hooks::new()).unwrap()
    };
    let traces = [trace(), trace(), trace()];
    (w, traces)
}

fn ranked(site: TapSite, width: usize, seed: u64) -> RankedNeurons {
    let mut rng = RngStream::new(seed, 1);
    let effects = (0..width)
        .map(|neuron| NeuronEffect {
            site,
            neuron,
            delta_pcc: rng.uniform(-1.0, 1.0),
            per_sentence: BTreeMap::new(),
        })
        .collect();
    rank_neurons(effects).unwrap()
}

fn partitions(site: TapSite, width: usize, frames: usize) -> Vec<RegionKind> {
    if site == TapSite::ConvOut {
        conv_groups(width)
            .into_iter()
            .map(|(a, b)| RegionKind::ChannelRange(a, b))
            .collect()
    } else {
        rnn_thirds(frames)
            .into_iter()
            .map(|(a, b)| RegionKind::TimeRange(a, b))
            .collect()
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn self_patches_reproduce_the_clean_output(seed in 0u64..10_000, steps in 3usize..12, lo in 0usize..8, len in 1usize..8) {
        let (w, [t, _, f]) = setup(seed, 4 * steps);
        let base = &t.mel_pred;
        let frames = t.frames();
        let tol = 1e-9;
        for site in SITES {
            let width = w.config().site_width(site);
            prop_assert!(patch_full(&w, &t, &t, site).unwrap().max_abs_diff(base) <= tol);
            for a in [0.0, 1.0] {
                prop_assert!(patch_interpolate(&w, &t, &t, site, a).unwrap().max_abs_diff(base) <= tol);
            }
            for i in 0..width {
                prop_assert!(neuron_patch(&w, &t, &t, site, i).unwrap().max_abs_diff(base) <= tol);
            }
            let r = ranked(site, width, seed);
            for k in 1..=width {
                prop_assert!(topk_neuron_patch(&w, &t, &t, &r, k).unwrap().max_abs_diff(base) <= tol);
            }
            let a = lo.min(frames - 1);
            let mask = RegionMask::new(site, RegionKind::TimeRange(a, (a + len).min(frames)));
            prop_assert!(patch_region(&w, &t, &t, &mask).unwrap().max_abs_diff(base) <= tol);
        }
        let whole = ScrubConfig { keep_conv: FracRange::whole(), keep_rnn: FracRange::whole() };
        for v in [ScrubVariant::KeepConv, ScrubVariant::KeepRnn, ScrubVariant::KeepCombo] {
            let out = causal_scrub(&w, &t, &t, &f, v, &whole, &mut RngStream::new(seed, 2)).unwrap();
            prop_assert!(out.max_abs_diff(base) <= tol);
        }
    }

    #[test]
    fn full_replacements_agree_bit_for_bit(seed in 0u64..10_000, steps in 3usize..12) {
        let (w, [r, d, f]) = setup(seed, 4 * steps);
        let whole = ScrubConfig { keep_conv: FracRange::whole(), keep_rnn: FracRange::whole() };
        for (site, variant) in [(TapSite::ConvOut, ScrubVariant::KeepConv), (TapSite::RnnOut, ScrubVariant::KeepRnn)] {
            let width = w.config().site_width(site);
            let full = patch_full(&w, &r, &d, site).unwrap();
            prop_assert!(topk_neuron_patch(&w, &r, &d, &ranked(site, width, seed), width).unwrap().bit_eq(&full));
            prop_assert!(patch_interpolate(&w, &r, &d, site, 1.0).unwrap().bit_eq(&full));
            let scrubbed = causal_scrub(&w, &r, &d, &f, variant, &whole, &mut RngStream::new(seed, 3)).unwrap();
            prop_assert!(scrubbed.bit_eq(&full));
            prop_assert!(patch_interpolate(&w, &r, &d, site, 0.0).unwrap().bit_eq(&r.mel_pred));
        }
    }

    #[test]
    fn union_of_partition_patches_is_the_full_patch(seed in 0u64..10_000, steps in 3usize..12) {
        let (w, [r, d, _]) = setup(seed, 4 * steps);
        for site in SITES {
            let width = w.config().site_width(site);
            let mut z = r.site(site).unwrap().clone();
            for p in partitions(site, width, r.frames()) {
                z = hybrid(&z, d.site(site).unwrap(), &RegionMask::new(site, p)).unwrap();
            }
            prop_assert!(z.bit_eq(d.site(site).unwrap()));
            prop_assert!(resume(&w, site, &z, &Hooks::new()).unwrap().bit_eq(&patch_full(&w, &r, &d, site).unwrap()));
        }
    }

    #[test]
    fn patched_output_ignores_recipient_inside_the_mask(seed in 0u64..10_000, steps in 3usize..12, g in 0usize..4) {
        let (w, [r, d, _]) = setup(seed, 4 * steps);
        let width = w.config().site_width(TapSite::ConvOut);
        let (a, b) = conv_groups(width)[g];
        let mask = RegionMask::new(TapSite::ConvOut, RegionKind::ChannelRange(a, b));
        let mut perturbed = r.clone();
        let mut rng = RngStream::new(seed, 4);
        for c in a..b {
            for v in perturbed.conv_out.row_mut(c) {
                *v += rng.standard_normal();
            }
        }
        let want = patch_region(&w, &r, &d, &mask).unwrap();
        prop_assert!(patch_region(&w, &perturbed, &d, &mask).unwrap().bit_eq(&want));
    }

    #[test]
    fn each_topk_step_adds_exactly_one_column(seed in 0u64..10_000, steps in 3usize..12) {
        let (_, [r, d, _]) = setup(seed, 4 * steps);
        let site = TapSite::RnnOut;
        let (zr, zd) = (r.site(site).unwrap(), d.site(site).unwrap());
        let order = ranked(site, zr.dim(1), seed);
        let mut prev = zr.clone();
        for k in 1..=order.len() {
            let next = hybrid(zr, zd, &order.topk_mask(k).unwrap()).unwrap();
            let added = order.order[k - 1];
            for t in 0..zr.dim(0) {
                for c in 0..zr.dim(1) {
                    let want = if c == added { zd.at(t, c) } else { prev.at(t, c) };
                    prop_assert_eq!(next.at(t, c).to_bits(), want.to_bits());
                }
            }
            prev = next;
        }
    }
}
