use gaitrecon::autoencoder::AutoencoderModel;
use gaitrecon::fusion::{
    encode_sequence, fusion_triples, fusion_triples_with_embeddings, reconstruct_sequence, reconstruct_with_embeddings,
    FusionModel, FusionShape, ReconstructOptions, ReconstructionModels,
};
use gaitrecon::occlusion::{synthesize_occlusion, OcclusionBand, OcclusionSpec};
use gaitrecon::predictor::{Direction, LstmPredictor, PredictorShape};
use gaitrecon::synth::{synth_corpus, SynthConfig};

#[test]
fn precomputed_embeddings_match_direct_reconstruction() {
    let seq = synth_corpus(&SynthConfig { subjects: 2, cycles_per_subject: 2, period: 12, seed: 4 }).unwrap().remove(0);
    let ae = AutoencoderModel::new(2).unwrap();
    let shape = PredictorShape { hidden: 6, reverse_backward: true };
    let fwd = LstmPredictor::new(Direction::Forward, shape, 3).unwrap();
    let bwd = LstmPredictor::new(Direction::Backward, shape, 4).unwrap();
    let fusion = FusionModel::new(FusionShape { width: 2, block_count: 1 }, 5).unwrap();
    let models = ReconstructionModels { autoencoder: &ae, forward: &fwd, backward: &bwd, fusion: &fusion };
    let encoded = encode_sequence(&seq, &ae).unwrap();
    assert_eq!(encoded.len(), seq.len());

    let spec = OcclusionSpec::new(OcclusionBand::new(0.2, 0.3).unwrap(), 8);
    let (occluded, mask) = synthesize_occlusion(&seq, &spec).unwrap();
    let options = ReconstructOptions::default();
    let direct = reconstruct_sequence(&occluded, &mask, &models, &options).unwrap();
    let reused = reconstruct_with_embeddings(&occluded, &mask, &encoded, &models, &options).unwrap();
    assert_eq!(direct.sequence, reused.sequence);
    assert_eq!(direct.plan, reused.plan);

    let a = fusion_triples(&seq, &mask, &models, options.propagation).unwrap();
    let b = fusion_triples_with_embeddings(&seq, &mask, &encoded, &models, options.propagation).unwrap();
    assert_eq!(a, b);

    assert!(reconstruct_with_embeddings(&occluded, &mask, &encoded[1..], &models, &options).is_err());
}
