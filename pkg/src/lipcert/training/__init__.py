from .config import ConfigError, TrainConfig
from .losses import cross_entropy, hinge, loss_ibp, loss_margin, lp_relaxed_max, mse_loss
from .loop import LOG_COLUMNS, TrainingDivergedError, finalize_running_mean, fit
from .optim import Adam, TrainState
from .schedules import ScheduleValues, schedules
