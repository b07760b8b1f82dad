"""Test importing the package."""


def test_import():
    """Test that the package and its submodules can be imported."""
    import segdecide

    assert segdecide.__version__

    from segdecide import analysis, cli, components, decision, metrics, priors, tensor_io

    assert cli.main is not None
    assert decision.decide is not None
    assert all(m is not None for m in (analysis, components, metrics, priors, tensor_io))

    from segdecide.synth import run_experiment

    assert callable(run_experiment)
