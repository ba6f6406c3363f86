# Copyright Contributors to the splatedit Project
# SPDX-License-Identifier: Apache-2.0
"""Gaussian splat scene editing: rendering, anchor-view proposal and pipeline commands."""

from ._core import *  # noqa: F401,F403
from ._core import __doc__  # noqa: F401

__version__ = "0.1.0"
