//! Seeded gradient-check cases shared by the gradient and acceptance tests.

use std::collections::BTreeMap;
use std::sync::Arc;

use lpfl::data::Tokenizer;
use lpfl::model::{is_adapter, MicroMlm, ModelConfig, ModelError, Trainable};
use lpfl::numerics::{Graph, NumericsError, ParamId, ParamStore, Tensor, Var};
use lpfl::prompting::{pattern_loss_on_tape, PromptSet, Prompted};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn randn(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    Tensor::randn(shape, 1.0, rng)
}

fn store(entries: Vec<(&str, Tensor)>) -> ParamStore {
    let mut s = ParamStore::new();
    for (id, t) in entries {
        s.insert(ParamId::new(id), t);
    }
    s
}

fn var(vars: &BTreeMap<ParamId, Var>, id: &str) -> Var {
    vars[&ParamId::new(id)]
}

/// `Σ out ⊙ w` for a fixed random `w`, so every output entry matters with a
/// different weight.
fn project(g: &mut Graph, out: Var, seed: u64) -> Result<Var, NumericsError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabcd);
    let shape = g.value(out).shape().to_vec();
    let w = g.constant(randn(&mut rng, &shape));
    let prod = g.mul(out, w)?;
    g.sum(prod)
}

pub type LossFn = Box<dyn Fn(&mut Graph, &BTreeMap<ParamId, Var>) -> Result<Var, NumericsError>>;

/// One named case: parameters and a scalar loss over them.
pub struct Case {
    pub name: String,
    pub params: ParamStore,
    pub loss: LossFn,
}

pub fn op_cases(seed: u64) -> Vec<Case> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (m, k, n) = (rng.gen_range(1..5), rng.gen_range(1..5), rng.gen_range(1..5));
    let mut cases = Vec::new();
    for (ta, tb) in [(false, false), (true, false), (false, true), (true, true)] {
        let a = if ta {
            randn(&mut rng, &[k, m])
        } else {
            randn(&mut rng, &[m, k])
        };
        let b = if tb {
            randn(&mut rng, &[n, k])
        } else {
            randn(&mut rng, &[k, n])
        };
        cases.push(Case {
            name: format!("matmul_t({ta}, {tb})"),
            params: store(vec![("a", a), ("b", b)]),
            loss: Box::new(move |g, v| {
                let out = g.matmul_t(var(v, "a"), ta, var(v, "b"), tb)?;
                project(g, out, seed)
            }),
        });
    }
    let x = randn(&mut rng, &[m, n]);
    let y = randn(&mut rng, &[m, n]);
    cases.push(Case {
        name: "add".into(),
        params: store(vec![("x", x.clone()), ("y", y.clone())]),
        loss: Box::new(move |g, v| {
            let out = g.add(var(v, "x"), var(v, "y"))?;
            project(g, out, seed)
        }),
    });
    cases.push(Case {
        name: "mul".into(),
        params: store(vec![("x", x.clone()), ("y", y)]),
        loss: Box::new(move |g, v| {
            let out = g.mul(var(v, "x"), var(v, "y"))?;
            project(g, out, seed)
        }),
    });
    cases.push(Case {
        name: "add_row".into(),
        params: store(vec![("x", x.clone()), ("b", randn(&mut rng, &[n]))]),
        loss: Box::new(move |g, v| {
            let out = g.add_row(var(v, "x"), var(v, "b"))?;
            project(g, out, seed)
        }),
    });
    let s = rng.gen_range(-2.0..2.0);
    cases.push(Case {
        name: "scale".into(),
        params: store(vec![("x", x.clone())]),
        loss: Box::new(move |g, v| {
            let out = g.scale(var(v, "x"), s)?;
            project(g, out, seed)
        }),
    });
    cases.push(Case {
        name: "gelu".into(),
        params: store(vec![("x", randn(&mut rng, &[m, n]).scale(2.0).unwrap())]),
        loss: Box::new(move |g, v| {
            let out = g.gelu(var(v, "x"))?;
            project(g, out, seed)
        }),
    });
    let c = n + 1;
    cases.push(Case {
        name: "layer_norm".into(),
        params: store(vec![
            ("x", randn(&mut rng, &[m, c])),
            ("gamma", randn(&mut rng, &[c])),
            ("beta", randn(&mut rng, &[c])),
        ]),
        loss: Box::new(move |g, v| {
            let out = g.layer_norm(var(v, "x"), var(v, "gamma"), var(v, "beta"), 1e-5)?;
            project(g, out, seed)
        }),
    });
    cases.push(Case {
        name: "softmax_rows".into(),
        params: store(vec![("x", randn(&mut rng, &[m, c]))]),
        loss: Box::new(move |g, v| {
            let out = g.softmax_rows(var(v, "x"))?;
            project(g, out, seed)
        }),
    });
    let rows: Vec<usize> = (0..m + 2).map(|_| rng.gen_range(0..m)).collect();
    cases.push(Case {
        name: "gather_rows".into(),
        params: store(vec![("t", x.clone())]),
        loss: Box::new(move |g, v| {
            let out = g.gather_rows(var(v, "t"), &rows)?;
            project(g, out, seed)
        }),
    });
    let start = rng.gen_range(0..c);
    let len = rng.gen_range(1..=c - start);
    cases.push(Case {
        name: "slice_cols".into(),
        params: store(vec![("x", randn(&mut rng, &[m, c]))]),
        loss: Box::new(move |g, v| {
            let out = g.slice_cols(var(v, "x"), start, len)?;
            project(g, out, seed)
        }),
    });
    cases.push(Case {
        name: "concat_cols".into(),
        params: store(vec![("p", randn(&mut rng, &[m, n])), ("q", randn(&mut rng, &[m, k]))]),
        loss: Box::new(move |g, v| {
            let out = g.concat_cols(&[var(v, "p"), var(v, "q"), var(v, "p")])?;
            project(g, out, seed)
        }),
    });
    let groups: Vec<Vec<usize>> = (0..3)
        .map(|_| (0..rng.gen_range(1..4)).map(|_| rng.gen_range(0..c)).collect())
        .collect();
    cases.push(Case {
        name: "group_sum".into(),
        params: store(vec![("x", randn(&mut rng, &[m, c]))]),
        loss: Box::new(move |g, v| {
            let out = g.group_sum(var(v, "x"), &groups)?;
            project(g, out, seed)
        }),
    });
    let target: Vec<f64> = {
        let raw: Vec<f64> = (0..m * c).map(|_| rng.gen_range(0.0..1.0)).collect();
        raw.chunks(c)
            .flat_map(|r| {
                let z: f64 = r.iter().sum();
                r.iter().map(move |x| x / z).collect::<Vec<_>>()
            })
            .collect()
    };
    let target = Arc::new(Tensor::new(vec![m, c], target).unwrap());
    cases.push(Case {
        name: "soft_cross_entropy".into(),
        params: store(vec![("x", randn(&mut rng, &[m, c]).scale(3.0).unwrap())]),
        loss: Box::new(move |g, v| g.soft_cross_entropy(var(v, "x"), target.clone())),
    });
    cases.push(Case {
        name: "sum and mean".into(),
        params: store(vec![("x", x), ("z", randn(&mut rng, &[k]))]),
        loss: Box::new(move |g, v| {
            let a = project(g, var(v, "x"), seed)?;
            let b = g.sum(var(v, "z"))?;
            let sq = g.mul(a, a)?;
            g.mean(&[a, b, sq])
        }),
    });
    cases
}

fn numerics(e: ModelError) -> NumericsError {
    match e {
        ModelError::Numerics(n) => n,
        other => panic!("model error in gradient check: {other}"),
    }
}

pub fn tiny_model(seed: u64) -> (MicroMlm, Tokenizer, PromptSet) {
    let prompts = PromptSet::imdb();
    let texts = [
        "plot cast dull film",
        "bright scene slow story",
        "good actors and music",
    ];
    let tok = Tokenizer::build(texts.iter().copied(), 80, &prompts.forced_words()).unwrap();
    let mut cfg = ModelConfig::new(tok.len());
    cfg.d_model = 8;
    cfg.n_heads = 2;
    cfg.d_ff = 8;
    cfg.n_layers = 1;
    cfg.max_len = 24;
    cfg.lora_rank = 2;
    let mut model = MicroMlm::init(cfg, seed).unwrap();
    // Non-zero B so that gradients with respect to A are not trivially zero.
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
    let ids: Vec<ParamId> = model.params().ids().filter(|id| is_adapter(id)).cloned().collect();
    for id in ids {
        let shape = model.params().get(&id).unwrap().shape().to_vec();
        model.params_mut().insert(id, Tensor::randn(&shape, 0.3, &mut rng));
    }
    (model, tok, prompts)
}

pub fn model_cases(seed: u64) -> Vec<Case> {
    let (model, tok, prompts) = tiny_model(seed);
    let verbalizer = prompts.verbalizer.resolve(&tok).unwrap();
    let prompted: Vec<Prompted> = prompts
        .patterns
        .iter()
        .take(2)
        .zip(["dull film and slow story", "good music"])
        .map(|(p, t)| Prompted::new(p, t, &tok, 24).unwrap())
        .collect();
    let mut cases = Vec::new();
    for (which, label) in [(Trainable::Adapters, "adapters"), (Trainable::All, "all weights")] {
        let params = model.params().subset(&model.trainable_ids(which));
        let m = model.clone();
        let pr = prompted.clone();
        let vb = verbalizer.clone();
        cases.push(Case {
            name: format!("pattern loss wrt {label}"),
            params,
            loss: Box::new(move |g, _| {
                let targets = [[0.8, 0.2], [0.1, 0.9]];
                let batch: Vec<(&Prompted, &[f64])> = pr.iter().zip(targets.iter()).map(|(p, t)| (p, &t[..])).collect();
                pattern_loss_on_tape(g, &m, &batch, &vb, which).map_err(|e| match e {
                    lpfl::prompting::PromptError::Model(me) => numerics(me),
                    lpfl::prompting::PromptError::Numerics(n) => n,
                    other => panic!("{other}"),
                })
            }),
        });
        let m = model.clone();
        let ids = prompted[0].ids.clone();
        cases.push(Case {
            name: format!("vocabulary logits wrt {label}"),
            params: model.params().subset(&model.trainable_ids(which)),
            loss: Box::new(move |g, _| {
                let rows = [0, ids.len() - 1];
                let out = m.vocab_logits(g, &ids, &rows, which).map_err(numerics)?;
                project(g, out, seed)
            }),
        });
    }
    cases
}

/// Every case for seeds `0..seeds`, each paired with its seed.
pub fn all_cases(seeds: u64) -> impl Iterator<Item = (u64, Case)> {
    (0..seeds).flat_map(|s| op_cases(s).into_iter().chain(model_cases(s)).map(move |c| (s, c)))
}
