"""ShapeConv layers and dual-stream training for image demoireing."""

from ._core import *  # noqa: F401,F403
from ._core import DemoireNet, check, psnr, ssim  # noqa: F401

__version__ = "0.1.0"
