use celo::baselines::{AdamConfig, Baseline};
use celo::eval::run_training;
use celo::lopt::{Celo, CeloParams, Variant};
use celo::tasks::{default_meta_train_configs, make_meta_train_suite};
use celo::{Optimizer, RngStream};

fn trained_like() -> CeloParams {
    let base = CeloParams::init(&RngStream::new(21));
    let mut meta = base.to_meta();
    for (i, (_, t)) in meta.iter_mut().enumerate() {
        let noise = RngStream::new(22).child("noise", i as u64).generator().normals(t.len(), 0.05);
        for (v, n) in t.data_mut().iter_mut().zip(noise) {
            *v += n;
        }
    }
    base.with_meta(&meta).unwrap()
}

fn losses(opt: &dyn Optimizer) -> Vec<f64> {
    let suite = make_meta_train_suite(&default_meta_train_configs(1, 7)).unwrap();
    run_training(opt, &suite[0], 10, 1).unwrap().losses
}

fn assert_close(got: &[f64], want: &[f64]) {
    assert_eq!(got.len(), want.len());
    for (t, (g, w)) in got.iter().zip(want).enumerate() {
        assert!((g - w).abs() <= 1e-9 * w.abs(), "step {t}: got {g:.17e}, want {w:.17e}");
    }
}

#[test]
fn adam_ten_steps_match_the_pinned_losses() {
    let adam = Baseline::Adam(AdamConfig::new(1e-3).unwrap());
    assert_close(
        &losses(&adam),
        &[
            2.751844320984119, 2.736727217050589, 2.619932600799843, 2.471718153348937, 2.6834484956482414,
            2.579804080356971, 2.4924297799458213, 2.262597680591362, 2.355542759610537, 2.620039173699351,
        ],
    );
}

#[test]
fn celo_ten_steps_match_the_pinned_losses() {
    assert_close(
        &losses(&Celo::new(trained_like(), Variant::Full)),
        &[
            2.751844320984119, 2.7639774748343764, 2.6745666252835734, 2.5484411152615403, 2.789086425709335,
            2.7078369731461804, 2.625564014946152, 2.417520425356371, 2.5689865826174096, 2.862703325743105,
        ],
    );
}

