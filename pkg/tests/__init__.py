# Unit, numerical and command-line tests for mcan
