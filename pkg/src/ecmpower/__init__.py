"""Runtime, power and energy models for loop kernels on multicore CPUs."""
