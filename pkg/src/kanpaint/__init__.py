"""kanpaint: diffusion inpainting with spline-activation (KAN) U-nets.

Everything runs on a small from-scratch tensor engine with tape-based
reverse-mode autodiff; see the README for the CLI and the test suite.
"""

from .config import RunConfig
from .data import (PhantomSpec, SliceRecord, generate_phantom, load_dataset,
                   mask_apply, save_dataset, slice_volume, split_by_subject)
from .diffusion import (DiffusionSchedule, diffusion_loss, make_schedule,
                        p_sample_step, q_sample, sample, training_target)
from .errors import (ConfigError, ContractError, DataError, DimensionError,
                     IncompatibilityError, KanpaintError)
from .gradcheck import check_gradients, numerical_gradient
from .io import read_tensor, write_tensor
from .kan import (KanBlock, KanLayer, SplineGrid, bspline_basis,
                  count_parameters, fit_spline_coeffs)
from .metrics import (EvalReport, EvalRow, mae, masked_mse, mse, psnr, ssim,
                      summary_table)
from .nn import (BatchNorm2d, Conv2d, Linear, Module, ModuleList,
                 SelfAttention2d, layer_norm)
from .optim import Adam, EmaState
from .repaint import InpaintTask, boundary_smoothness, inpaint
from .tensor import (Tensor, backward, concat, conv2d, matmul, max_pool2d,
                     no_grad, relu, sigmoid, silu, softmax,
                     upsample_nearest2d)
from .ukan import (Condition, ConvBlock, ImageEncoder, InpaintModel,
                   TumorGeometry, UKanDenoiser, parse_arch,
                   sinusoidal_embedding, tumor_geometry)

__version__ = "0.1.0"
