import pytest
from pydantic import ValidationError

from gcplan.core.config import Settings


def test_settings_defaults():
    """Test that settings have proper defaults"""
    settings = Settings()
    assert settings.DT == 0.5
    assert settings.HISTORY_STEPS == 5
    assert settings.HORIZON_STEPS == 16
    assert settings.NUM_SAMPLES == 1000
    assert settings.MAX_NODES == 8
    assert settings.NUM_MODES == 10
    assert settings.MISS_THRESHOLD == 16.0
    assert len(settings.FEATURE_SCALES) == 9


def test_environment_override(monkeypatch):
    """Test that GCPLAN_ environment variables override defaults"""
    monkeypatch.setenv("GCPLAN_NUM_SAMPLES", "250")
    monkeypatch.setenv("GCPLAN_FEATURE_SCALES", "[2, 5, 50, 1, 1, 1, 10, 0.1, 1]")
    settings = Settings()
    assert settings.NUM_SAMPLES == 250
    assert settings.FEATURE_SCALES[0] == 2.0


def test_feature_scales_validator():
    """Test the feature scale validator"""
    with pytest.raises(ValidationError):
        Settings(FEATURE_SCALES=[1.0] * 8)
    with pytest.raises(ValidationError):
        Settings(FEATURE_SCALES=[1.0] * 8 + [0.0])
