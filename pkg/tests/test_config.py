import pytest

from src.config import (
    ANS,
    DYNAMIC_PRESET,
    PNG_PLANE,
    PRESET_NAMES,
    STATIC_PRESET,
    VQ_ANS,
    apply_overrides,
    canonical_attribute,
    load_config,
    parse_overrides,
    parse_route,
    preset,
)
from src.errors import ConfigError


class TestPresets:
    @pytest.mark.parametrize("name", PRESET_NAMES)
    def test_every_preset_validates(self, name):
        assert preset(name).validate().preset == name

    def test_static_defaults(self):
        config = preset(STATIC_PRESET)
        assert config.route("means").bits == 16
        assert config.route("shN").codec == VQ_ANS
        assert config.prune.opacity == pytest.approx(0.005)
        assert "pos_motion" not in config.routes

    def test_dynamic_routes(self):
        config = preset(DYNAMIC_PRESET)
        assert config.route("pos_motion").bits == 12
        assert config.route("top_scale").transform == "log"

    def test_ablations(self):
        assert preset(STATIC_PRESET + "-noprune").prune.opacity is None
        assert preset(STATIC_PRESET + "-6bit").route("sh0").bits == 6
        assert preset(STATIC_PRESET + "-6bit").route("means").bits == 16
        assert all(r.codec == PNG_PLANE for r in preset(STATIC_PRESET + "-imgonly").routes.values())

    def test_presets_are_independent(self):
        a = preset(STATIC_PRESET)
        a.route("sh0").bits = 5
        assert preset(STATIC_PRESET).route("sh0").bits == 8

    def test_unknown_preset(self):
        with pytest.raises(ConfigError):
            preset("static-gscodec-fast")

    def test_unrouted_attribute_falls_back_to_png(self):
        route = preset(STATIC_PRESET).route("something_else")
        assert (route.codec, route.bits) == (PNG_PLANE, 8)


class TestOverrides:
    def test_nested_values(self):
        config = apply_overrides(preset(STATIC_PRESET), parse_overrides(
            'prune.opacity = 0.02\n'
            'prune.scale = [0.001, 0.5]\n'
            'routes.opacity.codec = "ans"\n'
            'routes.opacity.model = "gaussian"\n'
            'plas.weights.means = 2\n'
            'gof_len = 30\n'
        ))
        assert config.prune.opacity == pytest.approx(0.02)
        assert config.prune.scale == (0.001, 0.5)
        assert config.route("opacity_logits").codec == ANS
        assert config.route("opacity_logits").model == "gaussian"
        assert config.plas.weights == {"means": 2.0}
        assert config.gof_len == 30

    def test_original_untouched(self):
        base = preset(STATIC_PRESET)
        apply_overrides(base, {"seed": 9})
        assert base.seed == 0

    def test_unknown_key(self):
        with pytest.raises(ConfigError):
            apply_overrides(preset(STATIC_PRESET), {"prune": {"opactiy": 0.1}})

    def test_type_mismatch(self):
        with pytest.raises(ConfigError):
            apply_overrides(preset(STATIC_PRESET), {"gof_len": "thirty"})

    @pytest.mark.parametrize("values", [
        {"routes": {"sh0": {"bits": 4}}},
        {"routes": {"sh0": {"codec": "jpeg"}}},
        {"routes": {"opacity": {"codec": "vq+ans"}}},
        {"routes": {"means": {"codec": "ans", "model": "gaussian"}}},
        {"plas": {"init": "hilbert"}},
        {"gof_len": 0},
    ])
    def test_invalid_values(self, values):
        with pytest.raises(ConfigError):
            apply_overrides(preset(STATIC_PRESET), values)

    def test_malformed_toml(self):
        with pytest.raises(ConfigError):
            parse_overrides("prune.opacity = = 1")


class TestFiles:
    def test_preset_key_selects_base(self, tmp_path):
        path = tmp_path / "encode.toml"
        path.write_text('preset = "dynamic-gscodec-6bit"\nseed = 3\n', encoding="utf-8")
        config = load_config(str(path))
        assert config.preset == "dynamic-gscodec-6bit"
        assert config.seed == 3
        assert config.route("sh0").bits == 6

    def test_no_file(self):
        assert load_config(None, DYNAMIC_PRESET).preset == DYNAMIC_PRESET


class TestRoutes:
    def test_parse_route(self):
        assert parse_route("opacity=ans:10") == ("opacity_logits", "ans", 10)
        assert parse_route("sh0=png-plane") == ("sh0", "png-plane", None)

    @pytest.mark.parametrize("text", ["opacity", "opacity=ans:ten"])
    def test_bad_route(self, text):
        with pytest.raises(ConfigError):
            parse_route(text)

    def test_aliases(self):
        assert canonical_attribute("quat") == "rotations"
        assert canonical_attribute("SH_N") == "shN"
        assert canonical_attribute("means") == "means"
