import json

import pytest

from coinfer.errors import ParseError, ShapeError, UnknownModel, ValidationError
from coinfer.model_ir import (
    ModelSpec,
    OperatorKind,
    TensorShape,
    ZOO_NAMES,
    infer_shapes,
    load_model,
    model_zoo,
    save_model,
)

from conftest import chain, conv_op, fc_op, pool_op


class TestInferShapes:
    def test_conv_basic(self):
        model = chain((1, 28, 28), conv_op(1, 1, 4, k=5, s=1, p=0))
        assert infer_shapes(model)[-1] == TensorShape(4, 24, 24)

    def test_pool_basic(self):
        model = chain((3, 4, 4), pool_op(1, 3, k=2, s=2))
        assert infer_shapes(model)[-1] == TensorShape(3, 2, 2)

    def test_kernel_exceeds_input(self):
        model = chain((1, 24, 24), conv_op(1, 1, 4, k=25, s=1, p=0))
        with pytest.raises(ShapeError):
            infer_shapes(model)

    def test_channel_chain_violation(self):
        model = chain((1, 8, 8), conv_op(1, 1, 4), conv_op(2, 8, 4))
        with pytest.raises(ShapeError):
            infer_shapes(model)

    def test_fc_flatten(self):
        model = chain((2, 3, 3), fc_op(1, 18, 5))
        assert infer_shapes(model) == [TensorShape(5, 1, 1)]

    def test_fc_bad_flatten(self):
        model = chain((2, 3, 3), fc_op(1, 17, 5))
        with pytest.raises(ShapeError):
            infer_shapes(model)


class TestZoo:
    TABLE = {
        "lenet": (2, 3),
        "alexnet": (5, 3),
        "vgg11": (8, 3),
        "vgg13": (10, 3),
        "vgg16": (13, 3),
        "vgg19": (16, 3),
    }

    @pytest.mark.parametrize("name", ZOO_NAMES)
    def test_conv_fc_counts(self, name):
        model = model_zoo(name)
        convs = sum(1 for op in model.operators if op.kind == OperatorKind.CONV)
        fcs = sum(1 for op in model.operators
                  if op.kind == OperatorKind.FULLY_CONNECTED)
        assert (convs, fcs) == self.TABLE[name]

    @pytest.mark.parametrize("name", ZOO_NAMES)
    def test_shapes_infer_and_class_count(self, name):
        model = model_zoo(name)
        shapes = infer_shapes(model)
        assert len(shapes) == model.n
        expected_classes = 10 if name == "lenet" else 1000
        assert shapes[-1] == TensorShape(expected_classes, 1, 1)

    def test_lenet_has_two_pools(self):
        model = model_zoo("lenet")
        pools = [op for op in model.operators if op.kind == OperatorKind.POOL]
        assert len(pools) == 2

    def test_unknown_model(self):
        with pytest.raises(UnknownModel):
            model_zoo("resnet")

    def test_scaled_input(self):
        model = model_zoo("vgg11", input_hw=32)
        shapes = infer_shapes(model)
        assert shapes[-1].channels == 1000
        first_fc = next(op for op in model.operators
                        if op.kind == OperatorKind.FULLY_CONNECTED)
        assert first_fc.c_in == 512  # 512 channels at 1x1 after five pools


class TestSerialization:
    @pytest.mark.parametrize("name", ZOO_NAMES)
    def test_round_trip(self, name):
        model = model_zoo(name)
        assert load_model(save_model(model)) == model

    def test_two_operator_document(self):
        doc = {
            "name": "tiny",
            "input_shape": [1, 8, 8],
            "operators": [
                {"kind": "conv", "c_in": 1, "c_out": 4, "kernel_w": 3,
                 "kernel_h": 3, "stride": 1, "padding": 1, "has_bias": True},
                {"kind": "elementwise", "c_in": 4, "c_out": 4, "kernel_w": 1,
                 "kernel_h": 1, "stride": 1, "padding": 0, "has_bias": False},
            ],
        }
        model = load_model(json.dumps(doc))
        assert model.n == 2
        assert model.operators[0].kind == OperatorKind.CONV

    def test_chain_mismatch_is_validation_error(self):
        doc = {
            "name": "bad",
            "input_shape": [1, 8, 8],
            "operators": [
                {"kind": "conv", "c_in": 1, "c_out": 4, "kernel_w": 3,
                 "kernel_h": 3, "stride": 1, "padding": 1, "has_bias": True},
                {"kind": "conv", "c_in": 8, "c_out": 4, "kernel_w": 3,
                 "kernel_h": 3, "stride": 1, "padding": 1, "has_bias": True},
            ],
        }
        with pytest.raises(ValidationError):
            load_model(json.dumps(doc))

    def test_unknown_field_rejected(self):
        doc = json.loads(save_model(model_zoo("lenet")))
        doc["operators"][0]["dilation"] = 2
        with pytest.raises(ParseError, match="dilation"):
            load_model(json.dumps(doc))

    def test_malformed_json(self):
        with pytest.raises(ParseError, match="line"):
            load_model("{not json")

    def test_missing_field(self):
        with pytest.raises(ParseError, match="operators"):
            load_model('{"name": "x", "input_shape": [1, 2, 3]}')


class TestInvariants:
    def test_pool_must_keep_channels(self):
        with pytest.raises(ValidationError):
            pool_op(1, 4).__class__(1, OperatorKind.POOL, 4, 8, 2, 2, 2, 0, False)

    def test_fc_is_1x1(self):
        with pytest.raises(ValidationError):
            fc_op(1, 10, 5).__class__(1, OperatorKind.FULLY_CONNECTED,
                                      10, 5, 3, 3, 1, 0, True)

    def test_operator_indices_must_be_ordered(self):
        with pytest.raises(ValidationError):
            ModelSpec("bad", TensorShape(1, 4, 4),
                      (conv_op(2, 1, 2),))

    def test_bias_only_on_weighted_ops(self):
        with pytest.raises(ValidationError):
            pool_op(1, 4).__class__(1, OperatorKind.POOL, 4, 4, 2, 2, 2, 0, True)
