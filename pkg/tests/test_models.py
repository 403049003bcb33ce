import pytest

from models import AlphaModelParams, ConfigError, MonteCarloConfig, RunReport, SolverError, WeightOverflow


@pytest.mark.unit
class TestAlphaModelParams:
    @pytest.mark.parametrize("kwargs", [dict(nu=0.0, alpha=0.1, T=1.0), dict(nu=0.1, alpha=-0.1, T=1.0),
                                        dict(nu=0.1, alpha=0.1, T=0.0), dict(nu=0.1, alpha=0.1, T=1.0, d=4)])
    def test_invalid(self, kwargs):
        with pytest.raises(ValueError):
            AlphaModelParams(**kwargs)

    def test_copies(self):
        params = AlphaModelParams(nu=0.1, alpha=0.2, T=1.0, d=3)
        assert params.with_horizon(0.5).T == 0.5
        assert params.with_alpha(0.0).alpha == 0.0
        assert params.to_dict() == {'nu': 0.1, 'alpha': 0.2, 'T': 1.0, 'd': 3, 'L': 1.0}


@pytest.mark.unit
class TestMonteCarloConfig:
    def test_unknown_estimator(self):
        with pytest.raises(ValueError):
            MonteCarloConfig(n_paths=10, dt=0.1, seed=1, estimator="antithetic")

    def test_stride(self):
        with pytest.raises(ValueError):
            MonteCarloConfig(n_paths=10, dt=0.1, seed=1, stencil_stride=0)


@pytest.mark.unit
class TestRunReport:
    def test_passed_and_rows(self):
        report = RunReport(mode="oracle2d", config={}, config_hash="abc")
        assert report.passed
        report.verdicts["cfl"] = False
        report.add_row("norms", {'step': 0})
        assert not report.passed
        assert report.to_dict()['tables'] == ["norms"]

    def test_error_hierarchy(self):
        assert issubclass(WeightOverflow, SolverError)
        error = ConfigError("bad", {'run.mode': "unknown"})
        assert error.field_errors == {'run.mode': "unknown"}
        assert ConfigError("bad").field_errors == {}
