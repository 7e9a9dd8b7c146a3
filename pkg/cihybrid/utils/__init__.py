# CI hybrid precoding utilities package
