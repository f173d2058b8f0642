import json
import logging
from pathlib import Path

import numpy as np
from pydantic import ValidationError

from gcplan.core.errors import ModelFileError
from gcplan.models.policy import ScorerModel, ScorerParams
from gcplan.schemas.model_file import ModelFile, ScorerWeights

logger = logging.getLogger(__name__)


def model_to_schema(model: ScorerModel) -> ModelFile:
    params = model.params
    return ModelFile(
        mode=model.mode,
        feature_count=params.feature_count,
        hidden_units=params.hidden_units,
        weights=ScorerWeights(
            w1=params.w1.tolist(),
            b1=params.b1.tolist(),
            w2=params.w2.tolist(),
            b2=float(params.b2),
        ),
        beta=model.beta,
    )


def dumps_model(model: ScorerModel) -> str:
    """JSON text; floats use the shortest repr that round-trips exactly."""
    data = model_to_schema(model).model_dump(mode="json", exclude_none=True)
    return json.dumps(data, indent=1, allow_nan=False) + "\n"


def save_model(path, model: ScorerModel) -> None:
    Path(path).write_text(dumps_model(model), encoding="utf-8")
    logger.info(f"Wrote {model.mode.value} model to {path}")


def load_model(path) -> ScorerModel:
    """
    Read a model file.

    Raises:
        ModelFileError: If the file is not valid JSON or does not match the model schema
        OSError: If the file cannot be read
    """
    text = Path(path).read_text(encoding="utf-8")
    try:
        schema = ModelFile.model_validate(json.loads(text))
    except json.JSONDecodeError as e:
        raise ModelFileError(f"{path}: not valid JSON ({e})")
    except ValidationError as e:
        error = e.errors()[0]
        where = ".".join(str(part) for part in error["loc"]) or "<root>"
        raise ModelFileError(f"{path}: {where}: {error['msg']}")
    weights = schema.weights
    params = ScorerParams(
        w1=np.array(weights.w1, dtype=float),
        b1=np.array(weights.b1, dtype=float),
        w2=np.array(weights.w2, dtype=float),
        b2=float(weights.b2),
    )
    return ScorerModel(mode=schema.mode, params=params, beta=schema.beta)
