//! One optimization step: a discriminator update on real-vs-generated mel
//! windows, then a generator update on reconstruction + adversarial +
//! speaker-similarity losses.
//!
//! All randomness for an item (reference choice, window starts, dropout
//! masks) comes from that item's own stream keyed by `(seed, step,
//! utterance_id)`, so batch composition never perturbs what an individual
//! item sees. The step is atomic: if any loss turns non-finite, parameters
//! and optimizer state are left exactly as they were.

use ndarray::{s, Array2};

use refxvc_nn::{Adam, NodeId, ParamNodes, Tape};

use crate::error::{Error, Result};
use crate::model::discriminator::{
    self, draw_dropout_masks, draw_window_start, CONV_LAYERS, WINDOW_LENGTHS,
};
use crate::model::{content, decoder, pmn, timbre, Model};
use crate::training::features::FeatureStore;
use crate::training::loss::l_ss_graph;
use crate::training::sampler::sample_references;
use crate::training::schedule::noam_lr;
use crate::training::{item_stream, TrainConfig};

/// Batch-mean losses of one step. `total_g` is the scalar the generator
/// actually descended: `mae + λ_adv·adv_g + λ_ss·l_ss`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossReport {
    pub step: u64,
    pub mae: f64,
    pub adv_g: f64,
    pub adv_d: f64,
    pub l_ss: f64,
    pub total_g: f64,
    pub lr: f64,
}

/// Everything one item draws from its random stream, in draw order:
/// references, window starts, discriminator-pass masks (real then fake),
/// generator-pass masks.
struct ItemPlan {
    source_id: String,
    ref_ids: Vec<String>,
    /// `(window_len, start)`, ascending length, only windows that fit.
    windows: Vec<(usize, usize)>,
    d_real_masks: Vec<[Array2<f64>; CONV_LAYERS]>,
    d_fake_masks: Vec<[Array2<f64>; CONV_LAYERS]>,
    g_masks: Vec<[Array2<f64>; CONV_LAYERS]>,
}

fn plan_item(
    features: &FeatureStore,
    model: &Model,
    cfg: &TrainConfig,
    step: u64,
    utterance_id: &str,
) -> Result<ItemPlan> {
    let item = features.get(utterance_id)?;
    let mut rng = item_stream(cfg.seed, step, utterance_id);
    let pool = features.speaker_utterances(&item.speaker_id);
    let ref_ids = sample_references(pool, utterance_id, cfg.n_refs, cfg.ref_mode, &mut rng)?;
    let t = item.t();
    let windows: Vec<(usize, usize)> = WINDOW_LENGTHS
        .iter()
        .filter_map(|&w| draw_window_start(&mut rng, t, w).map(|start| (w, start)))
        .collect();
    let masks = |rng: &mut _| -> Vec<[Array2<f64>; CONV_LAYERS]> {
        windows
            .iter()
            .map(|&(w, _)| draw_dropout_masks(rng, w, &model.cfg))
            .collect()
    };
    let d_real_masks = masks(&mut rng);
    let d_fake_masks = masks(&mut rng);
    let g_masks = masks(&mut rng);
    Ok(ItemPlan {
        source_id: utterance_id.to_string(),
        ref_ids,
        windows,
        d_real_masks,
        d_fake_masks,
        g_masks,
    })
}

/// Sum of `terms` scaled by `1/denom` (batch or window mean).
fn mean_node(tape: &mut Tape, terms: &[NodeId], denom: usize) -> NodeId {
    let mut acc = terms[0];
    for &t in &terms[1..] {
        acc = tape.add(acc, t);
    }
    tape.scale(acc, 1.0 / denom as f64)
}

/// Runs one full step at 1-based `step`, updating `model.disc` via `opt_d`
/// and then `model.gen` via `opt_g`, both at the Noam rate for `step`.
pub fn train_step(
    model: &mut Model,
    opt_g: &mut Adam,
    opt_d: &mut Adam,
    features: &FeatureStore,
    batch: &[String],
    cfg: &TrainConfig,
    step: u64,
) -> Result<LossReport> {
    if batch.is_empty() {
        return Err(Error::InvalidInput("empty batch".into()));
    }
    let lr = noam_lr(step, cfg.base_lr, cfg.warmup_steps)?;
    let diverged = |what: &str| Error::NumericalDivergence {
        step,
        what: what.to_string(),
    };
    let b = batch.len();

    let plans: Vec<ItemPlan> = batch
        .iter()
        .map(|id| plan_item(features, model, cfg, step, id))
        .collect::<Result<_>>()?;

    // Generator graph, part 1: reconstruction and speaker similarity. The
    // discriminators are deliberately not touched yet — their frozen copies
    // must capture post-update values.
    let mut tape_g = Tape::new();
    let mut gen_nodes = ParamNodes::new(&model.gen);
    let mut mel_hats: Vec<NodeId> = Vec::with_capacity(b);
    let mut mae_items: Vec<NodeId> = Vec::with_capacity(b);
    let mut lss_items: Vec<NodeId> = Vec::new();
    for plan in &plans {
        let item = features.get(&plan.source_id)?;
        let h_s = content::forward(
            &mut tape_g,
            &model.gen,
            &mut gen_nodes,
            &model.cfg,
            &item.tokens.tokens,
            None,
        );
        let mut h_r_parts = Vec::with_capacity(plan.ref_ids.len());
        let mut s_l_parts = Vec::with_capacity(plan.ref_ids.len());
        let mut s_g_list = Vec::with_capacity(plan.ref_ids.len());
        for rid in &plan.ref_ids {
            let r = features.get(rid)?;
            let mel = tape_g.constant(r.mel.frames.clone());
            let (s_l, s_g) =
                timbre::forward(&mut tape_g, &model.gen, &mut gen_nodes, &model.cfg, mel);
            let h_r = content::forward(
                &mut tape_g,
                &model.gen,
                &mut gen_nodes,
                &model.cfg,
                &r.tokens.tokens,
                None,
            );
            h_r_parts.push(h_r);
            s_l_parts.push(s_l);
            s_g_list.push(s_g);
        }
        let h_r = if h_r_parts.len() == 1 {
            h_r_parts[0]
        } else {
            tape_g.concat_rows(&h_r_parts)
        };
        let s_l = if s_l_parts.len() == 1 {
            s_l_parts[0]
        } else {
            tape_g.concat_rows(&s_l_parts)
        };
        let (f, _attn) = pmn::forward(
            &mut tape_g,
            &model.gen,
            &mut gen_nodes,
            &model.cfg,
            h_s,
            h_r,
            s_l,
        );
        let s_g_mean = mean_node(&mut tape_g, &s_g_list, s_g_list.len());
        let fused = tape_g.add_row(f, s_g_mean);
        let pitch_in = tape_g.constant(decoder::pitch_input_matrix(&item.pitch));
        let mel_hat = decoder::forward(
            &mut tape_g,
            &model.gen,
            &mut gen_nodes,
            &model.cfg,
            h_s,
            fused,
            pitch_in,
            item.t(),
        );
        let target = tape_g.constant(item.mel.frames.clone());
        let diff = tape_g.sub(mel_hat, target);
        let abs = tape_g.abs(diff);
        mae_items.push(tape_g.mean_all(abs));
        mel_hats.push(mel_hat);
        if s_g_list.len() >= 2 {
            lss_items.push(l_ss_graph(&mut tape_g, &s_g_list));
        }
    }
    let mae_node = mean_node(&mut tape_g, &mae_items, b);
    let mae = tape_g.scalar(mae_node);
    if !mae.is_finite() {
        return Err(diverged("mae"));
    }
    // Items with a single reference have no pairs and contribute 0.
    let lss_node = (!lss_items.is_empty()).then(|| mean_node(&mut tape_g, &lss_items, b));
    let l_ss = lss_node.map_or(0.0, |n| tape_g.scalar(n));
    if !l_ss.is_finite() {
        return Err(diverged("l_ss"));
    }

    // Discriminator update: least squares on real windows vs the same
    // windows of the detached generator output.
    let mut tape_d = Tape::new();
    let mut disc_nodes = ParamNodes::new(&model.disc);
    let mut d_items: Vec<NodeId> = Vec::new();
    for (i, plan) in plans.iter().enumerate() {
        if plan.windows.is_empty() {
            continue; // contributes 0 to the batch mean
        }
        let item = features.get(&plan.source_id)?;
        let fake_mel = tape_g.value(mel_hats[i]).clone();
        let mut terms = Vec::with_capacity(plan.windows.len());
        for (j, &(w, start)) in plan.windows.iter().enumerate() {
            let real = tape_d.constant(item.mel.frames.slice(s![start..start + w, ..]).to_owned());
            let fake = tape_d.constant(fake_mel.slice(s![start..start + w, ..]).to_owned());
            let real_score = discriminator::score_window_graph(
                &mut tape_d,
                &model.disc,
                &mut disc_nodes,
                &model.cfg,
                real,
                w,
                Some(&plan.d_real_masks[j]),
            );
            let fake_score = discriminator::score_window_graph(
                &mut tape_d,
                &model.disc,
                &mut disc_nodes,
                &model.cfg,
                fake,
                w,
                Some(&plan.d_fake_masks[j]),
            );
            let rm1 = tape_d.add_const(real_score, -1.0);
            let r_sq = tape_d.mul(rm1, rm1);
            let f_sq = tape_d.mul(fake_score, fake_score);
            terms.push(tape_d.add(r_sq, f_sq));
        }
        let win_mean = mean_node(&mut tape_d, &terms, terms.len());
        d_items.push(win_mean);
    }
    let adv_d_node = (!d_items.is_empty()).then(|| mean_node(&mut tape_d, &d_items, b));
    let adv_d = adv_d_node.map_or(0.0, |n| tape_d.scalar(n));
    if !adv_d.is_finite() {
        return Err(diverged("adv_d"));
    }

    // Point of no return approaches: snapshot the discriminator so the step
    // can still abort atomically if the generator's adversarial term blows
    // up after this update.
    let disc_before = model.disc.clone();
    let opt_d_before = opt_d.clone();
    if let Some(node) = adv_d_node {
        tape_d.backward(node);
        let grads = disc_nodes.collect_grads(&tape_d, &model.disc);
        opt_d.step(&mut model.disc, &grads, lr);
    }

    // Generator graph, part 2: adversarial term through the *updated*
    // discriminator, whose parameters enter the tape as constants —
    // gradient flows through them into the decoder, not into them.
    let mut frozen_disc = ParamNodes::frozen(&model.disc);
    let mut g_items: Vec<NodeId> = Vec::new();
    for (i, plan) in plans.iter().enumerate() {
        if plan.windows.is_empty() {
            continue;
        }
        let mut terms = Vec::with_capacity(plan.windows.len());
        for (j, &(w, start)) in plan.windows.iter().enumerate() {
            let fake = tape_g.slice_rows(mel_hats[i], start, start + w);
            let score = discriminator::score_window_graph(
                &mut tape_g,
                &model.disc,
                &mut frozen_disc,
                &model.cfg,
                fake,
                w,
                Some(&plan.g_masks[j]),
            );
            let sm1 = tape_g.add_const(score, -1.0);
            terms.push(tape_g.mul(sm1, sm1));
        }
        let win_mean = mean_node(&mut tape_g, &terms, terms.len());
        g_items.push(win_mean);
    }
    let adv_g_node = (!g_items.is_empty()).then(|| mean_node(&mut tape_g, &g_items, b));
    let adv_g = adv_g_node.map_or(0.0, |n| tape_g.scalar(n));

    // Zero weights skip their term entirely so total_g == mae holds exactly.
    let mut total_node = mae_node;
    if cfg.lambda_adv != 0.0 {
        if let Some(n) = adv_g_node {
            let scaled = tape_g.scale(n, cfg.lambda_adv);
            total_node = tape_g.add(total_node, scaled);
        }
    }
    if cfg.lambda_ss != 0.0 {
        if let Some(n) = lss_node {
            let scaled = tape_g.scale(n, cfg.lambda_ss);
            total_node = tape_g.add(total_node, scaled);
        }
    }
    let total_g = tape_g.scalar(total_node);
    if !adv_g.is_finite() || !total_g.is_finite() {
        model.disc = disc_before;
        *opt_d = opt_d_before;
        return Err(diverged(if adv_g.is_finite() { "total_g" } else { "adv_g" }));
    }

    tape_g.backward(total_node);
    let grads = gen_nodes.collect_grads(&tape_g, &model.gen);
    opt_g.step(&mut model.gen, &grads, lr);

    Ok(LossReport {
        step,
        mae,
        adv_g,
        adv_d,
        l_ss,
        total_g,
        lr,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::{compute_mel, fit_tokenizer, Tokenizer};
    use crate::model::ModelConfig;
    use crate::training::features::{synthetic_item, UtteranceFeatures};
    use crate::training::RefMode;

    fn tiny_model() -> Model {
        Model::new(ModelConfig::tiny(), 11).unwrap()
    }

    fn tiny_tokenizer() -> Tokenizer {
        let wave: Vec<f64> = (0..16_000)
            .map(|i| {
                0.3 * (2.0 * std::f64::consts::PI * 170.0 * i as f64 / 16_000.0).sin()
                    + 0.1 * (2.0 * std::f64::consts::PI * 410.0 * i as f64 / 16_000.0).sin()
            })
            .collect();
        let mel = compute_mel(&wave).unwrap();
        fit_tokenizer(&[&mel], 4, 0).unwrap()
    }

    /// 4 utterances of one speaker, long enough for the two smaller windows.
    fn tiny_store(tok: &Tokenizer) -> FeatureStore {
        let items: Vec<UtteranceFeatures> = (0..4)
            .map(|i| {
                synthetic_item(
                    &format!("u_{i}"),
                    "spk",
                    150.0 + 20.0 * i as f64,
                    20_800 + 640 * i,
                    tok,
                )
            })
            .collect();
        FeatureStore::from_items(items).unwrap()
    }

    fn tiny_train_cfg() -> TrainConfig {
        let mut cfg = TrainConfig::toy();
        cfg.batch_size = 2;
        cfg.n_refs = 2;
        cfg.ref_mode = RefMode::SourceExcluded;
        cfg.seed = 5;
        cfg
    }

    #[test]
    fn zero_weights_make_total_exactly_mae() {
        let tok = tiny_tokenizer();
        let store = tiny_store(&tok);
        let mut model = tiny_model();
        let mut cfg = tiny_train_cfg();
        cfg.lambda_adv = 0.0;
        cfg.lambda_ss = 0.0;
        let mut opt_g = Adam::new(&model.gen, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps);
        let mut opt_d = Adam::new(&model.disc, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps);
        let batch = vec!["u_0".to_string(), "u_1".to_string()];
        let report =
            train_step(&mut model, &mut opt_g, &mut opt_d, &store, &batch, &cfg, 1).unwrap();
        assert_eq!(report.total_g, report.mae);
        assert!(report.mae.is_finite() && report.mae > 0.0);
        // the sideband losses are still reported
        assert!(report.adv_d.is_finite());
        assert!(report.l_ss >= 0.0);
    }

    /// A duplicated item must see exactly the random draws it sees alone, so
    /// `[a]` and `[a, a]` produce identical loss reports from the same
    /// initial state.
    #[test]
    fn batch_composition_does_not_perturb_items() {
        let tok = tiny_tokenizer();
        let store = tiny_store(&tok);
        let cfg = tiny_train_cfg();

        let run = |batch: &[&str]| {
            let mut model = tiny_model();
            let mut opt_g = Adam::new(&model.gen, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps);
            let mut opt_d = Adam::new(&model.disc, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps);
            let ids: Vec<String> = batch.iter().map(|s| s.to_string()).collect();
            train_step(&mut model, &mut opt_g, &mut opt_d, &store, &ids, &cfg, 1).unwrap()
        };

        let single = run(&["u_0"]);
        let doubled = run(&["u_0", "u_0"]);
        assert_eq!(single.mae, doubled.mae);
        assert_eq!(single.adv_d, doubled.adv_d);
        assert_eq!(single.adv_g, doubled.adv_g);
        assert_eq!(single.l_ss, doubled.l_ss);

        // two-item batches: order cannot matter either
        let ab = run(&["u_0", "u_1"]);
        let ba = run(&["u_1", "u_0"]);
        assert_eq!(ab.mae, ba.mae);
        assert_eq!(ab.adv_g, ba.adv_g);
    }

    #[test]
    fn non_finite_loss_aborts_without_touching_parameters() {
        let tok = tiny_tokenizer();
        let store = tiny_store(&tok);
        let mut model = tiny_model();
        let cfg = tiny_train_cfg();
        let id = model.gen.id("dec.final.w").unwrap();
        model.gen.value_mut(id)[[0, 0]] = f64::NAN;
        let gen_before = model.gen.clone();
        let disc_before = model.disc.clone();
        let mut opt_g = Adam::new(&model.gen, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps);
        let mut opt_d = Adam::new(&model.disc, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps);
        let batch = vec!["u_0".to_string()];
        let err = train_step(&mut model, &mut opt_g, &mut opt_d, &store, &batch, &cfg, 7)
            .unwrap_err();
        match err {
            Error::NumericalDivergence { step, .. } => assert_eq!(step, 7),
            other => panic!("expected NumericalDivergence, got {other}"),
        }
        for (name, value) in gen_before.iter() {
            let id = model.gen.id(name).unwrap();
            let now = model.gen.value(id);
            assert!(
                value
                    .iter()
                    .zip(now.iter())
                    .all(|(a, b)| (a == b) || (a.is_nan() && b.is_nan())),
                "generator param {name} changed"
            );
        }
        for (name, value) in disc_before.iter() {
            let id = model.disc.id(name).unwrap();
            assert_eq!(value, model.disc.value(id), "disc param {name} changed");
        }
        assert_eq!(opt_d.t(), 0);
    }

    #[test]
    fn losses_move_and_stay_finite_over_a_few_steps() {
        let tok = tiny_tokenizer();
        let store = tiny_store(&tok);
        let mut model = tiny_model();
        let cfg = tiny_train_cfg();
        let mut opt_g = Adam::new(&model.gen, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps);
        let mut opt_d = Adam::new(&model.disc, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps);
        let batch = vec!["u_0".to_string(), "u_2".to_string()];
        let first =
            train_step(&mut model, &mut opt_g, &mut opt_d, &store, &batch, &cfg, 1).unwrap();
        let mut last = first;
        for step in 2..=5 {
            last = train_step(&mut model, &mut opt_g, &mut opt_d, &store, &batch, &cfg, step)
                .unwrap();
            assert!(last.total_g.is_finite());
            assert_eq!(last.step, step);
            assert_eq!(
                last.lr,
                noam_lr(step, cfg.base_lr, cfg.warmup_steps).unwrap()
            );
        }
        assert!(last.mae < first.mae, "{} !< {}", last.mae, first.mae);
        assert_eq!(opt_g.t(), 5);
        assert_eq!(opt_d.t(), 5);
    }
}
