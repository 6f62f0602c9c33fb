"""SDWNet image deblurring on a small numpy autodiff engine."""

from .autodiff import ConvSpec, Parameter, Tape, Tensor, backward
from .losses import LossConfig, charbonnier, psnr, ssim_mean, total_loss
from .network import SDWNet, SDWNetConfig, count_params, init_params, sdwnet_forward
from .wavelet import SubbandSet, dwt_haar, idwt_haar

__all__ = [
    "ConvSpec", "Parameter", "Tape", "Tensor", "backward",
    "LossConfig", "charbonnier", "psnr", "ssim_mean", "total_loss",
    "SDWNet", "SDWNetConfig", "count_params", "init_params", "sdwnet_forward",
    "SubbandSet", "dwt_haar", "idwt_haar",
]
__version__ = "0.1.0"
