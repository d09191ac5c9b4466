#!/usr/bin/env python
# -*- coding: utf-8 -*-

import json
import math
import tempfile
import unittest
from pathlib import Path
import numpy as np
import torch
from parameterized import parameterized
import matplotlib.pyplot as plt
from depthkd.distiller import RunRecord
from depthkd.errors import AttackError, CheckpointError, EvaluationError, \
    ShapeError
from depthkd.evalkit import (
    MetricsReport, _decorate, attack_probe, attack_then_distill,
    depth_histogram, depth_metrics, histogram_analysis, ifgsm_attack,
    jensen_shannon, load_record, make_report, predict_depth,
    transform_discrepancy
)
from depthkd.flags import Method
from depthkd.nets import build_network, freeze
from depthkd.testing.datasets import TempDataset, tiny_domain, tiny_spec, \
    tiny_train_config, tiny_transform_spec


def _images(n: int = 2, seed: int = 0) -> torch.Tensor:
    return torch.rand((n, 12, 16, 3),
                      generator=torch.Generator().manual_seed(seed))


def _oracle_metrics(pred, gt):
    pairs = [
        (max(float(p), 1e-6), float(g))
        for p, g in zip(np.ravel(pred), np.ravel(gt)) if g > 0
    ]
    n = len(pairs)
    ratios = [max(p / g, g / p) for p, g in pairs]
    return {
        'rel': sum(abs(p - g) / g for p, g in pairs) / n,
        'delta1': sum(r < 1.25 for r in ratios) / n,
        'delta2': sum(r < 1.25 ** 2 for r in ratios) / n,
        'delta3': sum(r < 1.25 ** 3 for r in ratios) / n,
        'rmse': math.sqrt(sum((p - g) ** 2 for p, g in pairs) / n),
        'log10': sum(abs(math.log10(p) - math.log10(g))
                     for p, g in pairs) / n,
    }


def _metrics(delta1: float, seed: int = 0) -> MetricsReport:
    return MetricsReport(rel=0.2, delta1=delta1, delta2=0.9, delta3=0.95,
                         rmse=0.5, log10=0.1, n_pixels=100 + seed)


class TestDepthMetricsSuite(unittest.TestCase):
    """
    This suite tests the depth metrics.
    """
    def test_perfectPrediction_ideal(self):
        """
        Arrange: a prediction equal to the ground truth
        Act: compute the metrics
        Assert: errors are 0 and accuracies 1
        """
        gt = np.random.default_rng(0).uniform(0.5, 5.0, size=(2, 4, 5))
        report = depth_metrics(gt.copy(), gt)
        self.assertEqual(0.0, report.rel)
        self.assertEqual(0.0, report.rmse)
        self.assertEqual(0.0, report.log10)
        self.assertEqual((1.0, 1.0, 1.0),
                         (report.delta1, report.delta2, report.delta3))
        self.assertEqual(40, report.n_pixels)

    def test_onePixel_halfDepth(self):
        """
        Arrange: one pixel predicted at half its true depth
        Act: compute the metrics
        Assert: REL is 0.5, every δ is 0, RMSE is 1 and log10 is log10 2
        """
        report = depth_metrics(np.array([[1.0]]), np.array([[2.0]]))
        self.assertAlmostEqual(0.5, report.rel)
        self.assertEqual((0.0, 0.0, 0.0),
                         (report.delta1, report.delta2, report.delta3))
        self.assertAlmostEqual(1.0, report.rmse)
        self.assertAlmostEqual(math.log10(2.0), report.log10)

    def test_randomInstances_matchLoopOracle(self):
        """
        Arrange: 100 random predictions and ground truths with invalid pixels
        Act: compute the metrics and a per-pixel loop rendition of them
        Assert: every metric agrees within 1e-7
        """
        rng = np.random.default_rng(42)
        for _ in range(100):
            shape = tuple(rng.integers(1, 6, size=3))
            gt = rng.uniform(0.2, 10.0, size=shape)
            gt[rng.random(shape) < 0.2] = 0.0
            gt.flat[0] = 1.0
            pred = gt * rng.uniform(0.3, 2.5, size=shape)
            report = depth_metrics(pred, gt)
            for name, value in _oracle_metrics(pred, gt).items():
                self.assertAlmostEqual(value, getattr(report, name),
                                       delta=1e-7, msg=name)

    def test_zeroPrediction_clamped(self):
        """
        Arrange: a prediction of 0
        Act: compute the metrics
        Assert: they're finite
        """
        report = depth_metrics(np.zeros((1, 2)), np.ones((1, 2)))
        self.assertTrue(math.isfinite(report.log10))

    def test_noValidPixels_raises(self):
        """
        Arrange: ground truth that's all invalid
        Act: compute the metrics
        Assert: an `EvaluationError` is raised
        """
        with self.assertRaises(EvaluationError):
            depth_metrics(np.ones((2, 2)), np.zeros((2, 2)))

    def test_shapeMismatch_raises(self):
        """
        Arrange: maps of different shapes
        Act: compute the metrics
        Assert: a `ShapeError` is raised
        """
        with self.assertRaises(ShapeError):
            depth_metrics(np.ones((2, 2)), np.ones((2, 3)))

    def test_predictDepth_batchSizeIndependent(self):
        """
        Arrange: a network and images
        Act: predict with batch sizes 1 and 4
        Assert: the predictions agree
        """
        net = build_network(tiny_spec('teacher'))
        images = _images(4)
        self.assertTrue(torch.allclose(predict_depth(net, images, 1),
                                       predict_depth(net, images, 4),
                                       atol=1e-5))


class TestHistogramSuite(unittest.TestCase):
    """
    This suite tests depth histograms.
    """
    def test_singleValue_singleBin(self):
        """
        Arrange: depth maps with one value
        Act: histogram them
        Assert: all the mass is in one bin
        """
        hist = depth_histogram([np.full((3, 3), 2.5)], bins=10,
                               value_range=(0.0, 10.0))
        self.assertEqual(1.0, float(hist.normalized.max()))
        self.assertEqual(1, int((hist.counts > 0).sum()))

    def test_uniformValues_flat(self):
        """
        Arrange: one depth at the center of every bin
        Act: histogram them
        Assert: every bin holds the same mass
        """
        hist = depth_histogram([np.arange(10) + 0.5], bins=10,
                               value_range=(0.0, 10.0))
        np.testing.assert_allclose(hist.normalized, np.full(10, 0.1))

    def test_outOfRange_conserved(self):
        """
        Arrange: depths including invalid and out-of-range values
        Act: histogram them
        Assert: every valid pixel is counted and the mass sums to 1
        """
        depths = np.array([0.0, -1.0, 0.5, 3.0, 12.0, 25.0])
        hist = depth_histogram([depths], bins=5, value_range=(0.0, 10.0))
        self.assertEqual(4, int(hist.counts.sum()))
        self.assertEqual(2, int(hist.counts[-1]))
        self.assertAlmostEqual(1.0, float(hist.normalized.sum()))

    @parameterized.expand([(1, (0.0, 10.0)), (10, (5.0, 5.0))])
    def test_invalidBins_raises(self, bins, value_range):
        """
        Arrange: invalid bins
        Act: histogram depths
        Assert: an `EvaluationError` is raised

        :param bins: the number of bins
        :param value_range: the range of the bins
        """
        with self.assertRaises(EvaluationError):
            depth_histogram([np.ones(3)], bins, value_range)

    def test_jensenShannon_identicalAndDisjoint(self):
        """
        Arrange: two identical histograms and two disjoint ones
        Act: compute their divergences
        Assert: they're 0 and 1
        """
        a = depth_histogram([np.full(4, 1.0)], 4, (0.0, 4.0))
        b = depth_histogram([np.full(4, 3.5)], 4, (0.0, 4.0))
        self.assertAlmostEqual(0.0, jensen_shannon(a, a))
        self.assertAlmostEqual(1.0, jensen_shannon(a, b))

    def test_histogramAnalysis_boundedDivergences(self):
        """
        Arrange: a teacher, target depths and OOD images
        Act: analyze the histograms
        Assert: both divergences are in [0, 1]
        """
        teacher = freeze(build_network(tiny_spec('teacher')))
        target = np.random.default_rng(0).uniform(0.5, 5.0, size=(3, 12, 16))
        analysis = histogram_analysis(teacher, target, _images(3), seed=1,
                                      bins=8)
        for jsd in (analysis.jsd_ood, analysis.jsd_noise):
            self.assertGreaterEqual(jsd, 0.0)
            self.assertLessEqual(jsd, 1.0)
        self.assertEqual(8, len(analysis.noise.counts))


class TestAttackSuite(unittest.TestCase):
    """
    This suite tests the iterative fast gradient sign attack.
    """
    @classmethod
    def setUpClass(cls):
        cls.teacher = freeze(build_network(tiny_spec('teacher')))

    def test_zeroEpsilon_unchanged(self):
        """
        Arrange: images and ε = 0
        Act: attack them
        Assert: the result is bitwise equal to the input
        """
        images = _images(2)
        self.assertTrue(torch.equal(images,
                                    ifgsm_attack(self.teacher, images, 0.0)))

    @parameterized.expand([(1.0 / 255,), (8.0 / 255,)])
    def test_attack_withinBounds(self, epsilon):
        """
        Arrange: images, their target depths and a bound
        Act: attack them
        Assert: the perturbation stays within ε and the pixels within [0, 1]

        :param epsilon: the bound
        """
        images = _images(2, seed=1)
        targets = torch.full((2, 12, 16), 2.0)
        for t in (targets, None):
            attacked = ifgsm_attack(self.teacher, images, epsilon, steps=4,
                                    targets=t)
            self.assertLessEqual(float((attacked - images).abs().max()),
                                 epsilon + 1e-6)
            self.assertGreaterEqual(float(attacked.min()), 0.0)
            self.assertLessEqual(float(attacked.max()), 1.0)

    @parameterized.expand([(-0.1, 10), (0.1, 0)])
    def test_invalidArguments_raises(self, epsilon, steps):
        """
        Arrange: a negative bound or no steps
        Act: attack
        Assert: an `AttackError` is raised

        :param epsilon: the bound
        :param steps: the number of steps
        """
        with self.assertRaises(AttackError):
            ifgsm_attack(self.teacher, _images(1), epsilon, steps)

    def test_drift_zeroEpsilon_selfConsistent(self):
        """
        Arrange: images and the bounds (0, 4/255)
        Act: measure the teacher's drift
        Assert: with no perturbation the drift is the loss's floor
            (3 ln 0.5)
        """
        drift = attack_probe(self.teacher, _images(2), [0.0, 4.0 / 255],
                             steps=2)
        self.assertEqual(2, len(drift))
        self.assertAlmostEqual(3 * math.log(0.5), drift[0], places=4)

    def test_transformDiscrepancy_identityG_zero(self):
        """
        Arrange: a transformation network whose correction is zero
        Act: measure the discrepancy
        Assert: both discrepancies are 0
        """
        g = build_network(tiny_transform_spec())
        with torch.no_grad():
            g.head.weight.zero_()
            g.head.bias.zero_()
        self.assertEqual((0.0, 0.0),
                         transform_discrepancy(self.teacher, g, _images(2)))

    def test_transformDiscrepancy_batchSizeIndependent(self):
        """
        Arrange: a transformation network and five images
        Act: measure the discrepancy in batches of 2 and of 5
        Assert: the means agree
        """
        g = build_network(tiny_transform_spec(), seed=3)
        images = _images(5)
        whole = transform_discrepancy(self.teacher, g, images, batch_size=5)
        split = transform_discrepancy(self.teacher, g, images, batch_size=2)
        self.assertGreater(whole[0], 0.0)
        for a, b in zip(whole, split):
            self.assertAlmostEqual(a, b, places=6)

    def test_attackThenDistill_otherTeacher_raises(self):
        """
        Arrange: a teacher that differs from the expected one
        Act: attack and distill
        Assert: a `CheckpointError` is raised
        """
        with self.assertRaises(CheckpointError):
            attack_then_distill(
                self.teacher, None, [0.0], tiny_train_config(),
                tiny_spec('student'),
                teacher_spec=tiny_spec('teacher', base_width=16)
            )

    def test_attackThenDistill_studentsCheckpointed(self):
        """
        Arrange: an OOD set and two bounds
        Act: attack and distill into a run root
        Assert: each bound gets a labelled run with its student's checkpoint
        """
        with TempDataset(tiny_domain('ood'), count=4) as ood, \
                tempfile.TemporaryDirectory() as tmp:
            records = attack_then_distill(
                self.teacher, ood.manifest, [0.0, 2.0 / 255],
                tiny_train_config(epochs=1), tiny_spec('student'),
                out_root=tmp, steps=2, batch_size=4,
                teacher_spec=tiny_spec('teacher')
            )
            self.assertEqual(['eps0', 'eps2'], [r.label for r in records])
            for record in records:
                run = Path(tmp) / record.name
                self.assertTrue(
                    Path(record.checkpoints['student']).exists()
                )
                self.assertEqual(record.extras, load_record(run).extras)


class TestReportSuite(unittest.TestCase):
    """
    This suite tests writing reports.
    """
    @staticmethod
    def _record(method: Method, seed: int = 0, label: str = None,
                epsilon: float = None) -> RunRecord:
        return RunRecord(
            method=method, seed=seed, label=label,
            curves=[{'epoch': 0, 'lr': 0.001, 'total': 1.0},
                    {'epoch': 1, 'lr': 0.001, 'total': 0.5}],
            config={'seed': seed},
            metrics=_metrics(0.5 + 0.01 * seed, seed),
            extras={} if epsilon is None else {'epsilon': epsilon}
        )

    def test_singleRecord_noSweep(self):
        """
        Arrange: one record with an ε
        Act: write a report
        Assert: the table and curves are written but no sweep plot
        """
        with tempfile.TemporaryDirectory() as tmp:
            written = make_report(
                [self._record(Method.KD_OOD, epsilon=0.01)], tmp
            )
            names = {p.name for p in written}
            self.assertIn('metrics.json', names)
            self.assertIn('metrics.txt', names)
            self.assertIn('loss_curves.png', names)
            self.assertNotIn('epsilon_sweep.png', names)

    def test_twoEpsilons_sweepPlotted(self):
        """
        Arrange: two records with different bounds
        Act: write a report
        Assert: the sweep plot is written
        """
        records = [
            self._record(Method.KD_OOD, label='eps1', epsilon=1 / 255),
            self._record(Method.KD_OOD, label='eps4', epsilon=4 / 255),
        ]
        with tempfile.TemporaryDirectory() as tmp:
            written = make_report(records, tmp)
            self.assertTrue((Path(tmp) / 'epsilon_sweep.png').exists())
            self.assertIn(Path(tmp) / 'epsilon_sweep.png', written)

    def test_duplicateRuns_seedSuffixedAndOrdered(self):
        """
        Arrange: two seeds of one method and a teacher run
        Act: write a report
        Assert: rows are ordered by method and the duplicates carry their seeds
        """
        records = [
            self._record(Method.DATAFREE_FULL, seed=1),
            self._record(Method.DATAFREE_FULL, seed=0),
            self._record(Method.TEACHER_SUPERVISED),
        ]
        with tempfile.TemporaryDirectory() as tmp:
            make_report(records, tmp)
            rows = json.loads((Path(tmp) / 'metrics.json').read_text())['rows']
        self.assertEqual(
            ['teacher_supervised', 'datafree_full-seed0',
             'datafree_full-seed1'],
            [row['name'] for row in rows]
        )
        self.assertAlmostEqual(0.51, rows[2]['metrics']['delta1'])

    def test_rerun_identicalTable(self):
        """
        Arrange: a set of records
        Act: write the report twice
        Assert: the tables are byte-identical
        """
        records = [self._record(Method.KD_OOD),
                   self._record(Method.RANDOM_NOISE_KD)]
        with tempfile.TemporaryDirectory() as a, \
                tempfile.TemporaryDirectory() as b:
            make_report(records, a)
            make_report(list(reversed(records)), b)
            for name in ('metrics.json', 'metrics.txt'):
                self.assertEqual((Path(a) / name).read_bytes(),
                                 (Path(b) / name).read_bytes())

    def test_extras_tabulated(self):
        """
        Arrange: one record with a reported extra and one without
        Act: write a report
        Assert: the table gets a column for the extra, with `-` where it's
            missing, and the JSON rows carry the extras
        """
        drifted = self._record(Method.KD_OOD, label='eps1', epsilon=1 / 255)
        drifted.extras['teacher_drift'] = 0.25
        records = [drifted, self._record(Method.DATAFREE_FULL)]
        with tempfile.TemporaryDirectory() as tmp:
            make_report(records, tmp)
            lines = (Path(tmp) / 'metrics.txt').read_text().splitlines()
            rows = json.loads((Path(tmp) / 'metrics.json').read_text())['rows']
        self.assertEqual(['epsilon', 'teacher_drift'], lines[0].split()[-2:])
        self.assertEqual(['0.0039', '0.2500'], lines[1].split()[-2:])
        self.assertEqual(['-', '-'], lines[2].split()[-2:])
        self.assertEqual(0.25, rows[0]['extras']['teacher_drift'])
        self.assertEqual({}, rows[1]['extras'])

    def test_noExtras_metricColumnsOnly(self):
        """
        Arrange: records without reported extras
        Act: write a report
        Assert: the table has the run and metric columns only
        """
        with tempfile.TemporaryDirectory() as tmp:
            make_report([self._record(Method.KD_OOD)], tmp)
            header = (Path(tmp) / 'metrics.txt').read_text().splitlines()[0]
        self.assertEqual(['Run', 'REL', 'δ1', 'δ2', 'δ3', 'RMSE', 'log10'],
                         header.split())

    def test_twoGaps_gapSweepPlotted(self):
        """
        Arrange: two records at different domain gaps
        Act: write a report
        Assert: the gap sweep is plotted and the ε sweep isn't
        """
        records = []
        for t in (0.0, 1.0):
            record = self._record(Method.KD_OOD, label=f'gap{t:g}')
            record.extras['gap'] = t
            records.append(record)
        with tempfile.TemporaryDirectory() as tmp:
            names = {p.name for p in make_report(records, tmp)}
        self.assertIn('gap_sweep.png', names)
        self.assertNotIn('epsilon_sweep.png', names)

    def test_headings_titleCased(self):
        """
        Arrange: an empty plot
        Act: give it lower-case headings and a unit
        Assert: the headings are title-cased and the unit is kept as written
        """
        fig, ax = plt.subplots()
        try:
            _decorate(ax, 'student accuracy by OOD set size', 'depth',
                      'fraction of pixels', unit='m')
            self.assertEqual('Student Accuracy by OOD Set Size',
                             ax.get_title())
            self.assertEqual('Depth (m)', ax.get_xlabel())
            self.assertEqual('Fraction of Pixels', ax.get_ylabel())
        finally:
            plt.close(fig)

    def test_noRecords_raises(self):
        """
        Arrange: no records
        Act: write a report
        Assert: an `EvaluationError` is raised
        """
        with tempfile.TemporaryDirectory() as tmp:
            with self.assertRaises(EvaluationError):
                make_report([], tmp)

    def test_loadRecord_roundTrip(self):
        """
        Arrange: a saved run record
        Act: load it
        Assert: the metrics, curves and extras survive
        """
        record = self._record(Method.KD_OOD, seed=3, label='eps2',
                              epsilon=2 / 255)
        with tempfile.TemporaryDirectory() as tmp:
            record.save(tmp)
            loaded = load_record(tmp)
        self.assertEqual(record.metrics, loaded.metrics)
        self.assertEqual(record.curves, loaded.curves)
        self.assertEqual(record.extras, loaded.extras)
        self.assertEqual('kd_ood-eps2-seed3', loaded.name)

    def test_loadRecord_missing_raises(self):
        """
        Arrange: an empty directory
        Act: load a record from it
        Assert: an `EvaluationError` is raised
        """
        with tempfile.TemporaryDirectory() as tmp:
            with self.assertRaises(EvaluationError):
                load_record(tmp)


if __name__ == '__main__':
    unittest.main()
