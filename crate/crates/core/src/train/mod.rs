//! Training regimes: supervised counting, pre-train then fine-tune, and
//! joint synthetic-to-real adaptation. All runs are deterministic per seed
//! and can stream their artifacts into a [`RunDir`].

mod batch;
mod joint;
mod record;
mod supervised;

pub use batch::{epoch_order, image_batch, make_batch, prepare, to_signed, Batch, TrainItem};
pub use joint::{
    reconstruction_ssim, train_da_joint, translate_unit, DaInputs, DaModels, DaOutcome, TranslatedPredictor,
};
pub use record::{
    read_step_records, state_digest, EpochRecord, RunDir, RunRecord, StepRecord, CONFIG_FILE, RECORDS_FILE, RUN_FILE,
};
pub use supervised::{pretrain_then_finetune, train_supervised, DomainData, PretrainOutcome, SupervisedOutcome};
