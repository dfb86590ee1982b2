use scenetrack::cost_volume::DisplacementWindow;
use scenetrack::synth::{generate_sequence, moving_average, spsa_train, SceneConfig, SpsaConfig};
use scenetrack::{ModelParams, TrackerConfig};

#[test]
fn toy_corpus_loss_goes_down() {
    let scene = SceneConfig {
        width: 10,
        height: 10,
        frames: 6,
        margin: 2.0,
        ..SceneConfig::default()
    };
    let corpus: Vec<_> = (0..20).map(|s| generate_sequence(&scene, 300 + s).unwrap()).collect();
    let tracker = TrackerConfig::<f32> {
        displacement: DisplacementWindow::new(3),
        ..TrackerConfig::default()
    };
    let cfg = SpsaConfig::default();
    assert_eq!(cfg.steps, 2000);
    let out = spsa_train(&ModelParams::memory_seeded(0.25), &corpus, &tracker, &cfg).unwrap();
    let ma = moving_average(&out.loss_trace, 50);
    let (start, end) = (ma[49], *ma.last().unwrap());
    assert!(end < start, "moving average {start} -> {end}");
}
