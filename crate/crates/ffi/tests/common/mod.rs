use aerotext::models::{Architecture, Model, ModelConfig};
use aerotext::textprep::{fit_vocabulary, Preprocessor, StopwordList, Truncation};
use aerotext::training::ModelCheckpoint;

pub fn checkpoint() -> ModelCheckpoint {
    let vocabulary = fit_vocabulary(&["navy patrol crashed", "airliner passengers", "student pilot solo"], 100).unwrap();
    let config = ModelConfig {
        embedding_dim: 6,
        hidden_units: 5,
        head_units: 4,
        max_len: 12,
        ..ModelConfig::new(Architecture::Lstm, vocabulary.len())
    };
    ModelCheckpoint {
        model: Model::init(config, 21).unwrap(),
        preprocessor: Preprocessor {
            stopwords: StopwordList::default(),
            vocabulary,
            max_len: 12,
            truncation: Truncation::Head,
        },
        epoch: 1,
    }
}
