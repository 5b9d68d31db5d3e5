"""Comparison models: SMO-trained SVC, a cross-entropy MLP, and a deep squared-hinge SVM."""
