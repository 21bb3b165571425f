use graphcheck::encoder::LayerKind;
use graphcheck::gradcheck::{check_pipeline, pipeline_fixture, PipelineCheck};
use graphcheck::kg::BuildMode;

#[test]
fn fixture_has_the_required_shape() {
    let (model, p) = pipeline_fixture(&PipelineCheck::default()).unwrap();
    assert_eq!(p.claim_graph.num_nodes(), 3);
    assert_eq!(p.doc_graph.num_nodes(), 4);
    assert!(model.backbone_frozen());
}

#[test]
fn every_variant_matches_finite_differences() {
    for layer_kind in [LayerKind::Gat, LayerKind::GraphTransformer] {
        for build_mode in [BuildMode::EdgeAsInput, BuildMode::EdgeAsNode] {
            for calibration in [false, true] {
                let c = PipelineCheck {
                    layer_kind,
                    build_mode,
                    calibration,
                    ..PipelineCheck::default()
                };
                let r = check_pipeline(&c, 1e-4).unwrap();
                let worst = r.params.iter().max_by(|a, b| a.max_rel_err.total_cmp(&b.max_rel_err)).unwrap();
                assert!(r.passes(1e-4), "{c:?}: {} rel err {}", worst.name, worst.max_rel_err);
                assert_eq!(r.params.iter().any(|p| p.name == "verifier.answer_rows"), calibration);
            }
        }
    }
}
