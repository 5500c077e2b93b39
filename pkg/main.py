#!/usr/bin/env python3
"""
Equal Recourse - Command Line Entry Point
Recourse-equalizing classifiers: recourse-regularized kernel SVM and
explainer-driven re-weighting of black-box models
"""

import sys

from recourse.cli import main

if __name__ == "__main__":
    sys.exit(main(sys.argv[1:]))
