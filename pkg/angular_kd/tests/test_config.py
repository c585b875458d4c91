import tempfile
from pathlib import Path

from django.test import SimpleTestCase

from angular_kd.config import (
    ExperimentConfig,
    TrainConfig,
    apply_overrides,
    dump_config,
    load_config,
    parse_override,
    save_config,
)
from angular_kd.constants import AugMode
from angular_kd.helper.errors import ConfigError
from angular_kd.losses import Level


class ConfigFileTests(SimpleTestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.root = Path(self.tmp.name)

    def tearDown(self):
        self.tmp.cleanup()

    def test_dump_load_dump_is_stable(self):
        cfg = ExperimentConfig().with_train(n_views=3, dropout_probs=(0.1, 0.2, 0.3), gamma_init=0.35)
        first = dump_config(cfg)
        reloaded = load_config(save_config(cfg, self.root / "config.env"))
        self.assertEqual(reloaded, cfg)
        self.assertEqual(dump_config(reloaded), first)

    def test_dump_order_starts_with_train_keys(self):
        keys = [line.split("=", 1)[0] for line in dump_config(ExperimentConfig()).splitlines()]
        self.assertEqual(keys[0], "epochs")
        self.assertIn("data_seed", keys)
        self.assertLess(keys.index("student_dim"), keys.index("data_seed"))
        self.assertEqual(keys[-1], "standardize")

    def test_partial_file_keeps_defaults(self):
        path = self.root / "partial.env"
        path.write_text("epochs=10\nwarmup_epochs=2\nlr_milestones=5\naug_mode=noise\n", encoding="utf-8")
        cfg = load_config(path)
        self.assertEqual(cfg.train.epochs, 10)
        self.assertEqual(cfg.train.lr_milestones, (5,))
        self.assertIs(cfg.train.aug_mode, AugMode.NOISE)
        self.assertEqual(cfg.train.batch_size, TrainConfig().batch_size)

    def test_unknown_key(self):
        path = self.root / "bad.env"
        path.write_text("epochs=10\nwarmup=2\n", encoding="utf-8")
        with self.assertRaisesMessage(ConfigError, "warmup"):
            load_config(path)

    def test_bad_value(self):
        path = self.root / "bad.env"
        path.write_text("use_inter=maybe\n", encoding="utf-8")
        with self.assertRaises(ConfigError):
            load_config(path)

    def test_missing_file(self):
        with self.assertRaises(ConfigError):
            load_config(self.root / "absent.env")

    def test_semantic_errors_become_config_errors(self):
        path = self.root / "bad.env"
        path.write_text("imbalance_classes=1\nnum_classes=0\n", encoding="utf-8")
        with self.assertRaises(ConfigError):
            load_config(path)


class OverrideTests(SimpleTestCase):
    def test_parse(self):
        self.assertEqual(parse_override(" tau_Z = 2.0 "), ("tau_Z", "2.0"))
        with self.assertRaises(ConfigError):
            parse_override("tau_Z")

    def test_apply_on_top_of_file_values(self):
        base = ExperimentConfig().with_train(epochs=20, warmup_epochs=4, lr_milestones=(10,))
        cfg = apply_overrides(base, ["level=feature", "gamma_init=0.4"])
        self.assertIs(cfg.train.level, Level.FEATURE)
        self.assertEqual(cfg.train.gamma_init, 0.4)
        self.assertEqual(cfg.train.epochs, 20)

    def test_no_overrides(self):
        cfg = ExperimentConfig()
        self.assertIs(apply_overrides(cfg, []), cfg)


class TrainConfigTests(SimpleTestCase):
    def test_scaled_schedule(self):
        cfg = TrainConfig.scaled_to(60)
        self.assertEqual(cfg.lr_milestones, (37, 45, 52))
        self.assertEqual(cfg.warmup_epochs, 7)

    def test_scaled_schedule_tiny(self):
        cfg = TrainConfig.scaled_to(4)
        self.assertEqual(cfg.warmup_epochs, 1)
        self.assertEqual(cfg.lr_milestones, (2, 3))

    def test_full_schedule_lengths(self):
        cfg = TrainConfig.full_schedule()
        self.assertEqual((cfg.epochs, cfg.warmup_epochs), (240, 30))

    def test_warmup_must_leave_distillation(self):
        with self.assertRaises(ConfigError):
            TrainConfig(epochs=5, warmup_epochs=5, lr_milestones=())

    def test_milestones_increasing(self):
        with self.assertRaises(ConfigError):
            TrainConfig(lr_milestones=(45, 35))

    def test_dropout_count(self):
        with self.assertRaises(ConfigError):
            TrainConfig(n_views=2, dropout_probs=(0.1,))

    def test_head_dropout_probs(self):
        self.assertEqual(TrainConfig(n_views=2).head_dropout_probs(), [0.2, 0.25])
        self.assertEqual(TrainConfig(n_views=2, head_dropout=False).head_dropout_probs(), [0.0, 0.0])

    def test_uses_heads(self):
        self.assertTrue(TrainConfig().uses_heads)
        self.assertFalse(TrainConfig(aug_mode=AugMode.NOISE).uses_heads)
        self.assertFalse(TrainConfig(n_views=0).uses_heads)
