// SPDX-License-Identifier: MIT OR Apache-2.0

use modepatch::data::{clean_signal, generate, GenConfig, Mode, PerMode};
use modepatch::tensor::Tensor;

fn power(t: &Tensor) -> f64 {
    t.sum_sq() / t.numel() as f64
}

fn symmetric(snr: f64) -> GenConfig {
    GenConfig {
        n_keys: 12,
        eval_keys: 0,
        snr: PerMode {
            vocalized: snr,
            mimed: snr,
            imagined: snr,
        },
        mimed_distortion: 0.0,
        seed: 5,
        ..GenConfig::default()
    }
}

#[test]
fn every_key_has_three_trials_and_one_target() {
    let cfg = GenConfig {
        n_keys: 5,
        eval_keys: 3,
        t_in: 512,
        ..GenConfig::default()
    };
    let set = generate(&cfg).unwrap();
    assert_eq!(set.len(), 8);
    let frames = cfg.frames().unwrap();
    for e in set.entries() {
        assert_eq!(e.mel_target.shape(), &[frames, cfg.mel_bins]);
        for m in Mode::ALL {
            let t = e.trial(m);
            assert_eq!((t.key.as_str(), t.mode), (e.key.as_str(), m));
            assert_eq!(t.seeg.shape(), &[cfg.c_in, cfg.t_in]);
            assert!(t.seeg.is_finite());
        }
    }
}

#[test]
fn empirical_snr_matches_config() {
    let cfg = GenConfig {
        n_keys: 16,
        eval_keys: 0,
        ..GenConfig::default()
    };
    assert!(cfg.t_in >= 1024);
    let set = generate(&cfg).unwrap();
    for m in Mode::ALL {
        let (mut signal, mut noise) = (0.0, 0.0);
        for (i, e) in set.entries().iter().enumerate() {
            let clean = &clean_signal(&cfg, i).unwrap()[m];
            let n = e.trial(m).seeg.lincomb(1.0, clean, -1.0).unwrap();
            signal += power(clean);
            noise += power(&n);
        }
        let snr = signal / noise;
        let want = cfg.snr[m];
        assert!(
            (snr / want - 1.0).abs() < 0.05,
            "{m}: empirical {snr}, configured {want}"
        );
    }
}

#[test]
fn symmetric_config_modes_differ_only_by_noise() {
    let cfg = symmetric(2.0);
    let set = generate(&cfg).unwrap();
    for i in 0..set.len() {
        let clean = clean_signal(&cfg, i).unwrap();
        assert!(clean.vocalized.bit_eq(&clean.mimed) && clean.vocalized.bit_eq(&clean.imagined));
    }
    let moment = |m: Mode| set.entries().iter().map(|e| power(&e.trial(m).seeg)).sum::<f64>();
    let v = moment(Mode::Vocalized);
    for m in [Mode::Mimed, Mode::Imagined] {
        let p = moment(m);
        assert!((p / v - 1.0).abs() < 0.02, "{m}: {p} vs {v}");
    }
}

/// Mean, second moment and lag-1 autocorrelation of every trial of a mode.
fn summary(cfg: &GenConfig, m: Mode) -> [f64; 3] {
    let set = generate(cfg).unwrap();
    let (mut mean, mut sq, mut lag) = (0.0, 0.0, 0.0);
    let mut n = 0.0;
    for e in set.entries() {
        let x = &e.trial(m).seeg;
        for c in 0..x.dim(0) {
            let row = x.row(c);
            mean += row.iter().sum::<f64>();
            sq += row.iter().map(|v| v * v).sum::<f64>();
            lag += row.windows(2).map(|w| w[0] * w[1]).sum::<f64>();
            n += row.len() as f64;
        }
    }
    [mean / n, sq / n, lag / sq]
}

#[test]
fn mode_labels_are_exchangeable_under_symmetric_config() {
    let cfg = symmetric(1.5);
    let stats: Vec<[f64; 3]> = Mode::ALL.iter().map(|&m| summary(&cfg, m)).collect();
    for s in &stats[1..] {
        assert!((s[0] - stats[0][0]).abs() < 0.02, "{stats:?}");
        assert!((s[1] / stats[0][1] - 1.0).abs() < 0.02, "{stats:?}");
        assert!((s[2] - stats[0][2]).abs() < 0.02, "{stats:?}");
    }
}

#[test]
fn same_seed_is_bit_identical() {
    let cfg = GenConfig {
        n_keys: 3,
        eval_keys: 2,
        t_in: 256,
        seed: 17,
        ..GenConfig::default()
    };
    assert_eq!(generate(&cfg).unwrap(), generate(&cfg).unwrap());
}
