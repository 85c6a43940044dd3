import logging
import os
import tempfile
import unittest

import numpy as np

from modules.utils import (
    configure_logging,
    get_config_float,
    get_config_int,
    read_json,
    sha256_checksum,
    write_json,
)


class TestUtils(unittest.TestCase):
    def test_get_config_float_fallbacks(self):
        cfg = {"a": "2.5", "b": "", "c": float("nan"), "d": "x", "e": None}
        self.assertEqual(get_config_float(cfg, "a", 0.0), 2.5)
        for key in ("b", "c", "d", "e", "missing"):
            self.assertEqual(get_config_float(cfg, key, 7.0), 7.0)

    def test_get_config_int(self):
        self.assertEqual(get_config_int({"t1": "24"}, "t1", 1), 24)
        self.assertEqual(get_config_int({"t1": 3.0}, "t1", 1), 3)
        self.assertIsNone(get_config_int({}, "hour", None))

    def test_checksum_depends_on_values_and_order(self):
        a = np.array([[1.0, 2.0], [3.0, 4.0]])
        self.assertEqual(sha256_checksum("x", a), sha256_checksum("x", a.copy()))
        self.assertNotEqual(sha256_checksum("x", a), sha256_checksum("x", a + 1e-12))
        self.assertNotEqual(sha256_checksum("x", "y"), sha256_checksum("y", "x"))

    def test_write_json_is_deterministic(self):
        with tempfile.TemporaryDirectory() as tmp:
            p1 = write_json({"b": np.float64(1.5), "a": np.arange(3)}, os.path.join(tmp, "x", "one.json"))
            p2 = write_json({"a": [0, 1, 2], "b": 1.5}, os.path.join(tmp, "two.json"))
            with open(p1, "rb") as f1, open(p2, "rb") as f2:
                self.assertEqual(f1.read(), f2.read())
            self.assertEqual(read_json(p1), {"a": [0, 1, 2], "b": 1.5})

    def test_configure_logging_does_not_stack_handlers(self):
        logger = configure_logging("DEBUG")
        configure_logging("INFO")
        tagged = [h for h in logger.handlers if getattr(h, "_phasebal", False)]
        self.assertEqual(len(tagged), 1)
        self.assertEqual(logger.level, logging.INFO)
        configure_logging("not-a-level")
        self.assertEqual(logger.level, logging.WARNING)


if __name__ == '__main__':
    unittest.main()
