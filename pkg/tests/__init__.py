# Test package 