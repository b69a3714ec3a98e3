use super::*;
use crate::numkit::{grad_check, StreamId};

fn small_config(variant: Variant) -> ControllerConfig {
    ControllerConfig {
        variant,
        input_dim: 8,
        class_count: 3,
        model_dim: 8,
        heads: 2,
        key_dim: 4,
        value_dim: 4,
        layers: 2,
        ffn_hidden: 16,
        attention_dim: 6,
        zero_policy_head: false,
        ..ControllerConfig::default()
    }
}

fn inputs(n: usize, seed: u64) -> (Matrix, Vec<usize>) {
    let mut rng = RngStream::new(seed, StreamId::DataGen);
    let x = layers::uniform_matrix(n, 8, 1.5, &mut rng);
    let classes = (0..n).map(|i| (i * 7 + 1) % 3).collect();
    (x, classes)
}

fn controller(cfg: ControllerConfig) -> Controller {
    Controller::new(cfg, &mut RngStream::new(17, StreamId::ControllerInit)).unwrap()
}

#[test]
fn output_shapes() {
    let c = controller(small_config(Variant::Transformer));
    let (x, cls) = inputs(6, 1);
    let out = c.forward(&x, &cls).unwrap();
    assert_eq!(out.logits.shape(), (6, 2));
    assert!(out.value.is_finite());
}

#[test]
fn invalid_class_and_config_rejected() {
    let c = controller(small_config(Variant::Transformer));
    let (x, _) = inputs(2, 1);
    assert!(matches!(c.forward(&x, &[0, 3]), Err(Error::Validation(_))));
    let bad = ControllerConfig { value_dim: 3, ..small_config(Variant::Transformer) };
    assert!(matches!(bad.validate(), Err(Error::Config(_))));
}

#[test]
fn zero_policy_head_gives_even_odds() {
    let cfg = ControllerConfig { zero_policy_head: true, ..small_config(Variant::Transformer) };
    let c = controller(cfg);
    let (x, cls) = inputs(5, 2);
    let out = c.forward(&x, &cls).unwrap();
    assert!(out.logits.data().iter().all(|&l| l == 0.0));
    let s = sample_actions(&out.logits, &mut RngStream::new(1, StreamId::ActionSample), SampleMode::Greedy);
    assert!(s.actions.iter().all(|&a| a == 0));
    for lp in s.log_probs {
        assert_eq!(lp.exp(), 0.5);
    }
}

fn permuted(x: &Matrix, cls: &[usize], perm: &[usize]) -> (Matrix, Vec<usize>) {
    (x.select_rows(perm), perm.iter().map(|&i| cls[i]).collect())
}

#[test]
fn permutation_equivariance_without_positions() {
    let cfg = ControllerConfig { use_positions: false, ..small_config(Variant::Transformer) };
    let c = controller(cfg);
    let (x, cls) = inputs(6, 3);
    let perm = [4, 0, 5, 2, 1, 3];
    let a = c.forward(&x, &cls).unwrap();
    let (px, pc) = permuted(&x, &cls, &perm);
    let b = c.forward(&px, &pc).unwrap();
    assert!(b.logits.max_abs_diff(&a.logits.select_rows(&perm)) <= 1e-9);
    assert!((a.value - b.value).abs() <= 1e-9);
}

#[test]
fn positions_break_permutation_equivariance() {
    let c = controller(small_config(Variant::Transformer));
    let (x, cls) = inputs(6, 3);
    let perm = [4, 0, 5, 2, 1, 3];
    let a = c.forward(&x, &cls).unwrap();
    let (px, pc) = permuted(&x, &cls, &perm);
    let b = c.forward(&px, &pc).unwrap();
    assert!(b.logits.max_abs_diff(&a.logits.select_rows(&perm)) > 1e-6);
}

#[test]
fn attention_rows_sum_to_one() {
    let c = controller(small_config(Variant::Transformer));
    let (x, cls) = inputs(6, 4);
    let out = c.forward(&x, &cls).unwrap();
    for layer in 0..2 {
        for head in 0..2 {
            let w = out.attention_weights(layer, head).unwrap();
            for r in w.iter_rows() {
                assert!((r.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            }
        }
    }
    assert!(out.attention_weights(2, 0).is_none());
}

/// Scalar used by the gradient checks: sum of chosen-action log-probs plus
/// the squared state value.
fn check_controller(cfg: ControllerConfig) -> f64 {
    // wider init, non-zero biases and a value far from zero keep every
    // gradient entry well above finite-difference round-off
    let mut c = controller(ControllerConfig { init_scale: 1.5, ..cfg });
    let mut rng = RngStream::new(23, StreamId::ControllerInit);
    for p in c.params_mut() {
        if p.name.ends_with(".b") {
            let (r, k) = p.value.shape();
            p.value = layers::uniform_matrix(r, k, 0.5, &mut rng);
        }
        if p.name == "value.b" {
            p.value[(0, 0)] = 2.0;
        }
    }
    let (x, cls) = inputs(6, 5);
    let actions = [1u8, 0, 0, 1, 1, 0];
    let report = grad_check(
        &mut c,
        |c| {
            let out = c.forward(&x, &cls)?;
            let mut dlogits = Matrix::zeros(6, 2);
            let mut total = out.value * out.value;
            for (r, &a) in actions.iter().enumerate() {
                let row = out.logits.row(r);
                total += row[a as usize] - crate::numkit::log_sum_exp(row);
                dlogits.row_mut(r).copy_from_slice(&log_prob_gradient(row, a));
            }
            c.backward(&out, &dlogits, 2.0 * out.value)?;
            Ok(total)
        },
        1e-5,
    )
    .unwrap();
    assert!(report.max_rel_error < 1e-5, "{report:?}");
    report.max_rel_error
}

#[test]
fn transformer_gradients() {
    check_controller(small_config(Variant::Transformer));
}

#[test]
fn transformer_without_norm_gradients() {
    check_controller(ControllerConfig { layer_norm: false, ..small_config(Variant::Transformer) });
}

#[test]
fn gru_gradients() {
    check_controller(small_config(Variant::Gru));
}

#[test]
fn gru_attention_gradients() {
    check_controller(small_config(Variant::GruAttn));
}

fn toy_gru() -> (GruCell, Vec<[f64; 2]>) {
    let mut rng = RngStream::new(3, StreamId::ControllerInit);
    let mut cell = GruCell::new("toy", 2, 2, 1.0, &mut rng);
    for l in [&mut cell.update_input, &mut cell.reset_input, &mut cell.candidate_input] {
        l.bias.as_mut().unwrap().value = layers::uniform_matrix(1, 2, 0.5, &mut rng);
    }
    (cell, vec![[0.5, -1.0], [1.5, 0.25], [-0.75, 0.8]])
}

#[test]
fn gru_scan_matches_unrolled_arithmetic() {
    let (cell, xs) = toy_gru();
    let w = |l: &Linear| l.weight.value.clone();
    let b = |l: &Linear| l.bias.as_ref().map(|b| b.value.clone()).unwrap_or(Matrix::zeros(1, 2));
    let affine = |x: &[f64], wm: &Matrix, bias: &Matrix, i: usize| -> f64 {
        bias[(0, i)] + (0..x.len()).map(|j| x[j] * wm[(j, i)]).sum::<f64>()
    };
    let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
    let mut h = [0.0f64; 2];
    let mut manual = Vec::new();
    for x in &xs {
        let z: Vec<f64> = (0..2)
            .map(|i| sig(affine(x, &w(&cell.update_input), &b(&cell.update_input), i) + affine(&h, &w(&cell.update_hidden), &Matrix::zeros(1, 2), i)))
            .collect();
        let r: Vec<f64> = (0..2)
            .map(|i| sig(affine(x, &w(&cell.reset_input), &b(&cell.reset_input), i) + affine(&h, &w(&cell.reset_hidden), &Matrix::zeros(1, 2), i)))
            .collect();
        let rh = [r[0] * h[0], r[1] * h[1]];
        let n: Vec<f64> = (0..2)
            .map(|i| (affine(x, &w(&cell.candidate_input), &b(&cell.candidate_input), i) + affine(&rh, &w(&cell.candidate_hidden), &Matrix::zeros(1, 2), i)).tanh())
            .collect();
        h = [(1.0 - z[0]) * h[0] + z[0] * n[0], (1.0 - z[1]) * h[1] + z[1] * n[1]];
        manual.push(h);
    }
    let mut state = Matrix::zeros(1, 2);
    for (x, expect) in xs.iter().zip(&manual) {
        state = cell.step(&Matrix::row_vector(x), &state).unwrap();
        assert!((state[(0, 0)] - expect[0]).abs() < 1e-12);
        assert!((state[(0, 1)] - expect[1]).abs() < 1e-12);
    }
}

#[test]
fn closed_update_gate_keeps_zero_state() {
    let (mut cell, xs) = toy_gru();
    cell.update_input.bias.as_mut().unwrap().value = Matrix::filled(1, 2, -60.0);
    let mut state = Matrix::zeros(1, 2);
    for x in &xs {
        state = cell.step(&Matrix::row_vector(x), &state).unwrap();
    }
    assert!(state.data().iter().all(|h| h.abs() < 1e-20));
}

#[test]
fn gru_single_step_sequence() {
    let c = controller(small_config(Variant::Gru));
    let (x, cls) = inputs(1, 6);
    let out = c.forward(&x, &cls).unwrap();
    let Network::Gru(p) = &c.network else { unreachable!() };
    let embedded = p.embedding.forward(&x, &cls).unwrap();
    let h = p.cell.step(&embedded, &Matrix::zeros(1, 8)).unwrap();
    let ForwardCache::Gru(cache) = &out.cache else { unreachable!() };
    assert_eq!(cache.hidden(), &h);
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    for v in [Variant::Transformer, Variant::Gru, Variant::GruAttn] {
        let c = controller(small_config(v));
        let mut buf = Vec::new();
        write_checkpoint(&c, &mut buf).unwrap();
        let back = read_checkpoint(&buf[..]).unwrap();
        assert_eq!(back.config, c.config);
        for (a, b) in back.params().iter().zip(c.params()) {
            assert_eq!(a.name, b.name);
            let bits = |m: &Matrix| m.data().iter().map(|x| x.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(&a.value), bits(&b.value));
        }
        let mut corrupt = buf.clone();
        corrupt[1] = b'X';
        assert!(matches!(read_checkpoint(&corrupt[..]), Err(Error::Format(_))));
    }
}
