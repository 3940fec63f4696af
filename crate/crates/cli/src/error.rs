use activepinn::experiments::ExperimentError;
use activepinn::training::TrainError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),
    #[error("data generation: {0}")]
    Datagen(String),
    #[error("training: {0}")]
    Train(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Datagen(_) => 3,
            CliError::Train(_) => 4,
            CliError::Io(_) => 1,
        }
    }
}

impl From<ExperimentError> for CliError {
    fn from(e: ExperimentError) -> Self {
        let msg = e.to_string();
        match e {
            ExperimentError::Unknown { .. }
            | ExperimentError::InvalidSpec(_)
            | ExperimentError::Network(_) => CliError::Config(msg),
            ExperimentError::Datagen(_) | ExperimentError::Activation(_) => CliError::Datagen(msg),
            ExperimentError::Train(
                TrainError::InvalidSchedule(_) | TrainError::InvalidSetup(_) | TrainError::NoSeeds,
            ) => CliError::Config(msg),
            ExperimentError::Train(TrainError::Io(e)) | ExperimentError::Io(e) => CliError::Io(e),
            ExperimentError::Loss(_) | ExperimentError::Train(_) => CliError::Train(msg),
        }
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Io(e.into())
    }
}
