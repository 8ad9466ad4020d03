"""Policy network, proximal-policy update, and the training loop.

Import submodules directly (``headwayctl.learn.nets`` etc.); this package
re-exports nothing so the simulator can be used without pulling in the
training stack.
"""
