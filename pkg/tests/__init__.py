#!/usr/bin/env python
# -*- coding: utf-8 -*-
"""
测试包初始化文件
"""
