"""Early battery cycle-life prediction from discharge-curve sequences.

The package builds cycle-indexed capacity-difference sequences on a fixed
voltage grid, trains a two-layer LSTM regressor implemented from first
principles (forward, backpropagation through time and Adam all hand-written
on numpy), and compares it against a one-feature linear baseline with
RMSE/MAPE repeat experiments.
"""

from .dataset import (
    CellRecord,
    CycleCurve,
    DatasetSplit,
    DischargePoint,
    SynthParams,
    load_cells,
    load_manifest,
    split_dataset,
    synth_cell,
    write_cell,
)
from .features import (
    DEFAULT_GRID,
    Scaler,
    SequenceSample,
    VoltageGrid,
    apply_scaler,
    augment,
    build_sequence,
    fit_scaler,
    interpolate_qv,
    variance_feature,
)
from .nn import (
    Network,
    NetworkArch,
    grad_check,
    init_network,
    lstm_forward,
    mse_loss,
    network_backward,
    network_forward,
)
from .optim import AdamHyper, AdamState, TrainConfig, adam_step, make_batches, train
from .baseline import VarianceModel, fit_variance_model, predict_variance_model
from .evaluation import (
    EvalReport,
    PredictionSet,
    mape,
    rmse,
    run_experiments,
    sweep_terminal_cycles,
)
from .pipeline import ModelBundle, predict_cell, train_on_split

__version__ = "0.1.0"
