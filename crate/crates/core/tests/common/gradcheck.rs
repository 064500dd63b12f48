//! Parameter gradients of the fuzzy layer, an encoder block and the pair
//! model against central finite differences. Shared by the gradient tests
//! and the acceptance run.

use fuzzy_attn::encoder::{AttentionKind, EncoderBlock, EncoderConfig, Structure};
use fuzzy_attn::fuzzy::FuzzyAttentionLayer;
use fuzzy_attn::init;
use fuzzy_attn::model::{cross_entropy_var, ModelConfig, PairClassifier};
use fuzzy_attn::{ParamStore, Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const H: f64 = 1e-5;
pub const TOL: f64 = 1e-4;

pub fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-6)
}

/// Projects `out` onto a fixed random direction so every output entry matters.
pub fn probe(tape: &mut Tape, out: Var, dir: &Tensor) -> Var {
    let d = tape.constant(dir.clone());
    let prod = tape.mul(out, d).unwrap();
    tape.sum(prod)
}

fn perturb(store: &mut ParamStore, rng: &mut ChaCha8Rng) {
    // Move off the symmetric initialization so every parameter matters.
    for p in store.iter_mut() {
        let noise = init::normal(rng, p.value.shape(), 0.3);
        p.value = p.value.add(&noise).unwrap();
    }
}

/// Worst relative error over every entry of every stored parameter.
pub fn check_store(store: &mut ParamStore, loss: &dyn Fn(&mut Tape, &ParamStore) -> Var) -> f64 {
    store.zero_grad();
    let mut tape = Tape::new();
    let l = loss(&mut tape, store);
    tape.backward_into(l, store).unwrap();
    let value = |s: &ParamStore| {
        let mut t = Tape::new();
        let l = loss(&mut t, s);
        t.value(l).item().unwrap()
    };
    let ids: Vec<_> = store.iter().map(|(id, _)| id).collect();
    let mut worst = 0.0f64;
    for id in ids {
        let analytic = store.grad(id).data().to_vec();
        for (i, &a) in analytic.iter().enumerate() {
            let orig = store.value(id).data()[i];
            store.value_mut(id).data_mut()[i] = orig + H;
            let up = value(store);
            store.value_mut(id).data_mut()[i] = orig - H;
            let down = value(store);
            store.value_mut(id).data_mut()[i] = orig;
            worst = worst.max(rel_err(a, (up - down) / (2.0 * H)));
        }
    }
    worst
}

/// Fuzzy attention layer at `points` random instances.
pub fn fuzzy_layer_worst(points: u64) -> f64 {
    (0..points)
        .map(|seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
            let (s, c_in, d, r, c_out) = (
                rng.gen_range(1..5),
                rng.gen_range(1..5),
                rng.gen_range(1..5),
                rng.gen_range(1..5),
                rng.gen_range(1..4),
            );
            let mut store = ParamStore::new();
            let layer = FuzzyAttentionLayer::init(&mut store, &mut rng, "f", c_in, d, c_out, r);
            perturb(&mut store, &mut rng);
            let x = init::normal(&mut rng, &[s, c_in], 1.0);
            let dir = init::normal(&mut rng, &[s, c_out], 1.0);
            check_store(&mut store, &|tape, st| {
                let xv = tape.constant(x.clone());
                let (out, _) = layer.forward(tape, st, xv).unwrap();
                probe(tape, out, &dir)
            })
        })
        .fold(0.0, f64::max)
}

/// Encoder blocks, alternating fuzzy and dot attention.
pub fn encoder_block_worst(points: u64) -> f64 {
    (0..points)
        .map(|seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(200 + seed);
            let kind = if seed % 2 == 0 { AttentionKind::Fuzzy } else { AttentionKind::Dot };
            let d = rng.gen_range(2..5);
            let s = rng.gen_range(1..5);
            let mut cfg = EncoderConfig::new(Structure::TimeFirst, s, 3).with_uniform(1, kind);
            cfg.d_model = d;
            cfg.ffn_hidden = rng.gen_range(2..6);
            cfg.rules = rng.gen_range(1..4);
            let mut store = ParamStore::new();
            let block = EncoderBlock::init(&mut store, &mut rng, "b", kind, &cfg);
            perturb(&mut store, &mut rng);
            let x = init::normal(&mut rng, &[s, d], 1.0);
            let dir = init::normal(&mut rng, &[s, d], 1.0);
            check_store(&mut store, &|tape, st| {
                let xv = tape.constant(x.clone());
                let out = block.forward(tape, st, xv).unwrap();
                probe(tape, out.hidden, &dir)
            })
        })
        .fold(0.0, f64::max)
}

/// Full pair model (embedding, one fuzzy block, head) under cross-entropy.
pub fn pair_model_worst(points: u64) -> f64 {
    (0..points)
        .map(|seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(300 + seed);
            let (s, c) = (rng.gen_range(2..4), rng.gen_range(2..4));
            let mut cfg = EncoderConfig::new(Structure::TimeFirst, s, c).with_uniform(1, AttentionKind::Fuzzy);
            cfg.d_model = 3;
            cfg.ffn_hidden = 4;
            cfg.rules = 2;
            let mut mc = ModelConfig::new(cfg);
            mc.head_hidden = 4;
            let mut model = PairClassifier::new(mc, seed).unwrap();
            perturb(&mut model.store, &mut rng);
            let d1 = init::normal(&mut rng, &[s, c], 1.0);
            let d2 = init::normal(&mut rng, &[s, c], 1.0);
            let label = (seed % 2) as u8;
            let arch = model.clone();
            check_store(&mut model.store, &|tape, st| {
                let mut m = arch.clone();
                m.store = st.clone();
                let a = tape.constant(d1.clone());
                let b = tape.constant(d2.clone());
                let fwd = m.forward_pair(tape, a, b).unwrap();
                cross_entropy_var(tape, fwd.logits, label).unwrap()
            })
        })
        .fold(0.0, f64::max)
}
