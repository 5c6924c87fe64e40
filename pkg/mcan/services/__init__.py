# Analysis, training, imaging, metrics and evaluation services
