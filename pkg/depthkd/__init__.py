#!/usr/bin/env python
# -*- coding: utf-8 -*-

"""
.. currentmodule:: depthkd
.. moduleauthor:: Pat Daburu <pat@daburu.net>

Data-free knowledge distillation for monocular depth estimation, at desk scale.
"""

__version__ = '0.3.0'  #: the working version
__release__ = '0.3.0'  #: the release version
