//! Central finite differences against the analytic gradients of the tiny encoder.

mod common;

use common::{gradient_check, random_batch, seeded, MAX_REL_ERR};
use nxkt::encoding::build_vocab;
use nxkt::model::{init_params, DropoutMode, EncoderConfig, Preset};

#[test]
fn every_parameter_matches_finite_differences() {
    let vocab = build_vocab(["ice is a kind of solid steam gas water liquid rock"], 1, 100);
    let cfg = EncoderConfig {
        dropout_rate: 0.0,
        ..Preset::Tiny.config(vocab.len(), 8)
    };
    let mut rng = seeded(17);
    for round in 0..5 {
        let mut params = init_params(&cfg, round).unwrap();
        let (batch, labels) = random_batch(&vocab, &mut rng, 4, 8);
        let r = gradient_check(&mut params, &batch, &labels, DropoutMode::Off);
        println!(
            "batch {round}: {} parameters, worst relative error {:.3e} (two-point {:.3e})",
            r.parameters, r.worst, r.worst_two_point
        );
        assert!(r.worst <= MAX_REL_ERR, "batch {round}: {}", r.worst);
    }
}

#[test]
fn fixed_dropout_masks_match_finite_differences() {
    let vocab = build_vocab(["a b c d e f g"], 1, 100);
    let cfg = Preset::Tiny.config(vocab.len(), 8);
    let mut params = init_params(&cfg, 99).unwrap();
    let mut rng = seeded(3);
    let (batch, labels) = random_batch(&vocab, &mut rng, 3, 8);
    let r = gradient_check(&mut params, &batch, &labels, DropoutMode::Sampled { seed: 5 });
    println!("dropout: worst relative error {:.3e}", r.worst);
    assert!(r.worst <= MAX_REL_ERR, "{}", r.worst);
}
