use candle_core::{DType, Tensor};
use vlseg::data::{synth_toy_dataset_with, SynthOptions};
use vlseg::model::checkpoint::load_model;
use vlseg::model::{LoraConfig, ModelConfig, SegModel};
use vlseg::training::{corpus_tokenizer, fit, TrainConfig, TrainSample, CHECKPOINT_FILE, LOSS_CURVE_FILE};
use vlseg::Error;

fn one_sample() -> TrainSample {
    let opts = SynthOptions { slices_per_scan: 1, ..SynthOptions::default() };
    let ds = synth_toy_dataset_with(1, &["disk"], 64, 3, &opts).unwrap();
    let s = &ds.slices[0];
    TrainSample {
        image: s.image.clone(),
        target: s.mask.binary(s.label),
        class_name: "disk".into(),
        modality: s.image.modality.clone(),
    }
}

fn fresh(sample: &TrainSample, cfg: ModelConfig) -> SegModel {
    SegModel::new(cfg, corpus_tokenizer([sample]), DType::F32).unwrap()
}

#[test]
fn overfit_loss_trend_and_determinism() {
    let sample = one_sample();
    let cfg = TrainConfig { epochs: 200, batch_size: 1, ..TrainConfig::default() };
    let a = fit(&fresh(&sample, ModelConfig::toy()), &[sample.clone()], &[], &cfg, None).unwrap();
    let b = fit(&fresh(&sample, ModelConfig::toy()), &[sample.clone()], &[], &cfg, None).unwrap();
    assert_eq!(a.records.len(), 200);
    assert_eq!(a.records, b.records);
    let totals: Vec<f64> = a.records.iter().map(|r| r.total).collect();
    for i in 0..totals.len() - 50 {
        assert!(totals[i + 50] < totals[i], "no decrease over steps {i}..{}", i + 50);
    }
    assert_eq!(a.records[0].lr, cfg.lr);
}

#[test]
fn adapters_leave_base_language_model_untouched() {
    let sample = one_sample();
    let lora = Some(LoraConfig::default());
    let model = fresh(&sample, ModelConfig { lora, ..ModelConfig::toy() });
    let before = model.store().snapshot().unwrap();
    let cfg = TrainConfig { epochs: 3, batch_size: 1, lora, ..TrainConfig::default() };
    fit(&model, &[sample], &[], &cfg, None).unwrap();
    let after = model.store().snapshot().unwrap();
    let bytes = |t: &Tensor| t.flatten_all().unwrap().to_vec1::<f32>().unwrap();
    let mut frozen = 0;
    let mut moved = 0;
    for (name, t) in &before {
        let same = bytes(t) == bytes(&after[name]);
        if name.starts_with("lm.") && !name.contains(".lora_") {
            assert!(same, "{name} changed");
            frozen += 1;
        } else if !same {
            moved += 1;
        }
    }
    assert!(frozen > 0 && moved > 0);
    assert!(after.keys().any(|k| k.contains(".lora_b")));
}

#[test]
fn adapter_mismatch_and_empty_split_rejected() {
    let sample = one_sample();
    let model = fresh(&sample, ModelConfig::toy());
    let cfg = TrainConfig::default();
    assert!(matches!(fit(&model, &[], &[], &cfg, None), Err(Error::InvalidArgument(_))));
    let lora_cfg = TrainConfig { lora: Some(LoraConfig::default()), ..cfg };
    assert!(fit(&model, &[sample], &[], &lora_cfg, None).is_err());
}

#[test]
fn non_finite_weights_abort_and_keep_last_checkpoint() {
    let sample = one_sample();
    let model = fresh(&sample, ModelConfig::toy());
    let dir = tempfile::tempdir().unwrap();
    let cfg = TrainConfig { epochs: 1, batch_size: 1, ..TrainConfig::default() };
    let report = fit(&model, &[sample.clone()], &[sample.clone()], &cfg, Some(dir.path())).unwrap();
    assert_eq!(report.best_epoch, 1);
    assert!(report.best_tune_dsc.is_some());
    let ckpt = dir.path().join(CHECKPOINT_FILE);
    let good = std::fs::read(&ckpt).unwrap();

    let (_, var) = model.store().vars().iter().find(|(k, _)| k.starts_with("decoder.")).unwrap();
    let nan = Tensor::full(f32::NAN, var.dims(), var.device()).unwrap();
    var.set(&nan).unwrap();
    let err = fit(&model, &[sample], &[], &cfg, Some(dir.path())).unwrap_err();
    match err {
        Error::Stage { source, .. } => assert!(matches!(*source, Error::NonFinite(_))),
        other => panic!("unexpected error {other}"),
    }
    assert_eq!(std::fs::read(&ckpt).unwrap(), good);
    load_model(&ckpt, DType::F32).unwrap();
    let curve = std::fs::read_to_string(dir.path().join(LOSS_CURVE_FILE)).unwrap();
    assert!(curve.starts_with("step,lr,text_loss,bce_loss,dice_loss,total"));
}
