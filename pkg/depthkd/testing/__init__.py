#!/usr/bin/env python
# -*- coding: utf-8 -*-

# Created by pat on 5/11/18
"""
.. currentmodule:: depthkd.testing
.. moduleauthor:: Pat Daburu <pat@daburu.net>

This package contains resources for testing the distillation pipeline at a
scale that runs in seconds.
"""
