#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""python -m bodyfit"""

import sys

from bodyfit.cli import main

sys.exit(main())
