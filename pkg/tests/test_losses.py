#!/usr/bin/env python
# -*- coding: utf-8 -*-

import copy
import math
import unittest
import torch
from parameterized import parameterized
from depthkd.errors import LossError, ShapeError
from depthkd.flags import StatKind
from depthkd.losses import (
    LossBreakdown, bn_alignment_loss, depth_loss, distillation_objective,
    generator_objective, kd_plain_loss, pixel_objective, reconstruction_loss
)
from depthkd.nets import (
    BNLayerStats, BNStatSet, build_network, freeze
)
from depthkd.testing.datasets import tiny_spec, tiny_transform_spec

LN_HALF = math.log(0.5)


def _depths(n: int = 2, size=(6, 7), seed: int = 0) -> torch.Tensor:
    g = torch.Generator().manual_seed(seed)
    return 0.5 + 4.0 * torch.rand((n, *size), generator=g)


def _images(n: int = 2, seed: int = 0, dtype=torch.float32) -> torch.Tensor:
    g = torch.Generator().manual_seed(seed)
    return (0.25 + 0.5 * torch.rand((n, 12, 16, 3), generator=g)).to(dtype)


def _stat_set(means, variances, kind: StatKind) -> BNStatSet:
    return BNStatSet(
        layers=[
            BNLayerStats(mean=torch.tensor(m, dtype=torch.float64),
                         variance=torch.tensor(v, dtype=torch.float64),
                         channel_count=len(m))
            for m, v in zip(means, variances)
        ],
        kind=kind
    )


def _oracle_depth_loss(pred, target) -> float:
    """Per-pixel loop rendition of the depth loss (every pixel valid)."""
    total = 0.0
    for b in range(pred.shape[0]):
        h, w = pred.shape[1:]
        e = [[abs(float(pred[b, i, j]) - float(target[b, i, j]))
              for j in range(w)] for i in range(h)]
        depth = sum(math.log(e[i][j] + 0.5)
                    for i in range(h) for j in range(w)) / (h * w)
        gx = sum(math.log(abs(e[i][j + 1] - e[i][j]) + 0.5)
                 for i in range(h) for j in range(w - 1)) / (h * (w - 1))
        gy = sum(math.log(abs(e[i + 1][j] - e[i][j]) + 0.5)
                 for i in range(h - 1) for j in range(w)) / ((h - 1) * w)
        normal = 0.0
        for i in range(h - 1):
            for j in range(w - 1):
                vectors = []
                for d in (pred, target):
                    vectors.append((
                        -(float(d[b, i, j + 1]) - float(d[b, i, j])),
                        -(float(d[b, i + 1, j]) - float(d[b, i, j])),
                        1.0
                    ))
                dot = sum(a * c for a, c in zip(*vectors))
                norms = [math.sqrt(sum(a * a for a in v)) for v in vectors]
                normal += 1.0 - dot / (norms[0] * norms[1])
        normal /= (h - 1) * (w - 1)
        total += depth + gx + gy + normal
    return total / pred.shape[0]


def _numeric_gradients(objective, parameters, count: int = 10,
                       h: float = 1e-3):
    """
    Compare analytic and central-difference gradients on the first element of
    the first `count` parameter tensors.
    """
    params = [p for p in parameters if p.requires_grad][:count]
    for p in params:
        p.grad = None
    objective().backward()
    pairs = []
    for p in params:
        index = (0,) * p.dim()
        analytic = float(p.grad[index])
        with torch.no_grad():
            original = float(p[index])
            p[index] = original + h
            plus = float(objective())
            p[index] = original - h
            minus = float(objective())
            p[index] = original
        pairs.append((analytic, (plus - minus) / (2 * h)))
    return pairs


class TestDepthLossSuite(unittest.TestCase):
    """
    This suite tests the composite depth loss.
    """
    def test_identical_expectedConstant(self):
        """
        Arrange: a prediction equal to its target
        Act: compute the loss
        Assert: the terms are ln 0.5, 2 ln 0.5 and 0
        """
        target = _depths()
        loss = depth_loss(target.clone(), target)
        self.assertAlmostEqual(LN_HALF, float(loss.components['depth']),
                               places=5)
        self.assertAlmostEqual(2 * LN_HALF, float(loss.components['grad']),
                               places=5)
        self.assertAlmostEqual(0.0, float(loss.components['normal']),
                               places=5)
        self.assertAlmostEqual(3 * LN_HALF, float(loss.total), places=5)

    def test_constantOffset_expectedTerms(self):
        """
        Arrange: a prediction offset from its target by 1 everywhere
        Act: compute the loss
        Assert: the terms are ln 1.5, 2 ln 0.5 and 0
        """
        target = _depths(seed=3)
        loss = depth_loss(target + 1.0, target)
        self.assertAlmostEqual(math.log(1.5), float(loss.components['depth']),
                               places=5)
        self.assertAlmostEqual(2 * LN_HALF, float(loss.components['grad']),
                               places=5)
        self.assertAlmostEqual(0.0, float(loss.components['normal']),
                               places=5)

    @parameterized.expand([(seed,) for seed in range(3)])
    def test_random_matchesLoopOracle(self, seed):
        """
        Arrange: a random 4 x 4 prediction and target
        Act: compute the loss and a per-pixel loop rendition of it
        Assert: they agree within 1e-9

        :param seed: the random seed
        """
        pred = _depths(1, (4, 4), seed=2 * seed).double()
        target = _depths(1, (4, 4), seed=2 * seed + 1).double()
        self.assertAlmostEqual(_oracle_depth_loss(pred, target),
                               float(depth_loss(pred, target).total),
                               delta=1e-9)

    def test_invalidPixels_ignored(self):
        """
        Arrange: a target with zero-depth pixels that the prediction misses
            badly
        Act: compute the depth term
        Assert: only the valid pixels count
        """
        target = _depths(1, (4, 4))
        pred = target.clone()
        target[0, 0, 0] = 0.0
        pred[0, 0, 0] = 100.0
        loss = depth_loss(pred, target)
        self.assertAlmostEqual(LN_HALF, float(loss.components['depth']),
                               places=5)

    @parameterized.expand([
        (torch.ones(2, 4, 4), torch.ones(2, 4, 5), ShapeError),
        (torch.ones(4, 4), torch.ones(4, 4), ShapeError),
        (torch.ones(2, 4, 4), torch.zeros(2, 4, 4), LossError),
    ])
    def test_badInputs_raises(self, pred, target, error):
        """
        Arrange: inputs that can't be scored
        Act: compute the loss
        Assert: the expected error is raised

        :param pred: the prediction
        :param target: the target
        :param error: the expected error type
        """
        with self.assertRaises(error):
            depth_loss(pred, target)

    def test_maskedNonPositiveTarget_raises(self):
        """
        Arrange: a mask that marks a zero-depth pixel as valid
        Act: compute the loss
        Assert: a `LossError` is raised
        """
        target = _depths(1, (4, 4))
        target[0, 1, 1] = 0.0
        with self.assertRaises(LossError):
            depth_loss(target.clone(), target,
                       torch.ones_like(target, dtype=torch.bool))


class TestKDPlainLossSuite(unittest.TestCase):
    """
    This suite tests distillation with labelled target data.
    """
    @parameterized.expand([(1.0, 'teacher'), (0.0, 'ground_truth')])
    def test_extremeLambda_singleTerm(self, kd_lambda, term):
        """
        Arrange: predictions and a λ of 0 or 1
        Act: compute the loss
        Assert: the total is the depth loss against one target only

        :param kd_lambda: the teacher weight
        :param term: the component that should remain
        """
        teacher, student, truth = (_depths(seed=s) for s in range(3))
        loss = kd_plain_loss(teacher, student, truth, kd_lambda)
        target = teacher if term == 'teacher' else truth
        self.assertAlmostEqual(float(depth_loss(student, target).total),
                               float(loss.total), places=5)

    @parameterized.expand([(-0.1,), (1.5,)])
    def test_lambdaOutOfRange_raises(self, kd_lambda):
        """
        Arrange: a λ outside [0, 1]
        Act: compute the loss
        Assert: a `LossError` is raised

        :param kd_lambda: the teacher weight
        """
        with self.assertRaises(LossError):
            kd_plain_loss(_depths(), _depths(), _depths(), kd_lambda)


class TestBNAlignmentLossSuite(unittest.TestCase):
    """
    This suite tests the batch-normalization alignment loss.
    """
    def test_identical_zero(self):
        """
        Arrange: batch-wise statistics equal to the running statistics
        Act: compute the loss
        Assert: it's 0
        """
        means, variances = [[0.1, 0.2], [0.3]], [[1.0, 2.0], [0.5]]
        loss = bn_alignment_loss(
            _stat_set(means, variances, StatKind.BATCHWISE),
            _stat_set(means, variances, StatKind.RUNNING)
        )
        self.assertEqual(0.0, float(loss))

    @parameterized.expand([(1, 2.0), (2, 4.0)])
    def test_unitMeanOffset_expected(self, layers, expected):
        """
        Arrange: four-channel layers whose means are all off by 1
        Act: compute the loss
        Assert: each layer contributes 2

        :param layers: the number of layers
        :param expected: the expected loss
        """
        loss = bn_alignment_loss(
            _stat_set([[1.0] * 4] * layers, [[1.0] * 4] * layers,
                      StatKind.BATCHWISE),
            _stat_set([[0.0] * 4] * layers, [[1.0] * 4] * layers,
                      StatKind.RUNNING)
        )
        self.assertAlmostEqual(expected, float(loss), places=9)

    @parameterized.expand([(0.5,), (3.0,)])
    def test_scaledDifferences_scaledLoss(self, scale):
        """
        Arrange: statistics whose differences from the running statistics are
            scaled by a positive factor
        Act: compute the loss
        Assert: the loss scales by the same factor

        :param scale: the factor
        """
        running = _stat_set([[0.0, 0.0, 0.0]], [[1.0, 1.0, 1.0]],
                            StatKind.RUNNING)
        d_mean, d_var = [0.3, -0.2, 0.5], [0.1, 0.4, -0.3]

        def shifted(c):
            return _stat_set([[c * d for d in d_mean]],
                             [[1.0 + c * d for d in d_var]],
                             StatKind.BATCHWISE)

        base = float(bn_alignment_loss(shifted(1.0), running))
        self.assertAlmostEqual(scale * base,
                               float(bn_alignment_loss(shifted(scale),
                                                       running)),
                               places=9)

    def test_misaligned_raises(self):
        """
        Arrange: stat sets with different channel counts
        Act: compute the loss
        Assert: a `LossError` is raised
        """
        with self.assertRaises(LossError):
            bn_alignment_loss(
                _stat_set([[0.0, 0.0]], [[1.0, 1.0]], StatKind.BATCHWISE),
                _stat_set([[0.0]], [[1.0]], StatKind.RUNNING)
            )

    def test_wrongKinds_raises(self):
        """
        Arrange: two running stat sets
        Act: compute the loss
        Assert: a `LossError` is raised
        """
        stats = _stat_set([[0.0]], [[1.0]], StatKind.RUNNING)
        with self.assertRaises(LossError):
            bn_alignment_loss(stats, stats)


class TestReconstructionLossSuite(unittest.TestCase):
    """
    This suite tests the reconstruction loss.
    """
    def test_constantShift_meanAbsolute(self):
        """
        Arrange: images and a copy shifted by 0.1
        Act: compute the loss
        Assert: it's 0.1
        """
        images = _images(dtype=torch.float64)
        self.assertAlmostEqual(
            0.1, float(reconstruction_loss(images, images + 0.1)), places=9
        )

    def test_shapeMismatch_raises(self):
        """
        Arrange: batches of different shapes
        Act: compute the loss
        Assert: a `ShapeError` is raised
        """
        with self.assertRaises(ShapeError):
            reconstruction_loss(_images(2), _images(3))


class TestGeneratorObjectiveSuite(unittest.TestCase):
    """
    This suite tests the transformation network's objective.
    """
    def setUp(self):
        self.teacher = freeze(build_network(tiny_spec('teacher'), seed=0))
        self.g = build_network(tiny_transform_spec(), seed=1)

    def test_zeroWeights_zeroTotal(self):
        """
        Arrange: α = β = 0
        Act: compute the objective
        Assert: the total is 0 while the components aren't
        """
        loss = generator_objective(self.g, self.teacher, _images(),
                                   alpha=0.0, beta=0.0)
        self.assertEqual(0.0, float(loss.total))
        self.assertGreater(float(loss.components['bn']), 0.0)

    def test_identityG_zeroReconstruction(self):
        """
        Arrange: a transformation network whose correction is zero
        Act: compute the objective
        Assert: the reconstruction term is 0
        """
        with torch.no_grad():
            self.g.head.weight.zero_()
            self.g.head.bias.zero_()
        loss = generator_objective(self.g, self.teacher, _images())
        self.assertEqual(0.0, float(loss.components['rec']))

    def test_negativeWeight_raises(self):
        """
        Arrange: a negative α
        Act: compute the objective
        Assert: a `LossError` is raised
        """
        with self.assertRaises(LossError):
            generator_objective(self.g, self.teacher, _images(), alpha=-1.0)

    def test_gradients_matchCentralDifferences(self):
        """
        Arrange: double-precision networks
        Act: differentiate the objective with respect to G's parameters
        Assert: analytic and central-difference gradients agree to a relative
            1e-4
        """
        teacher = self.teacher.double()
        g = self.g.double()
        images = _images(dtype=torch.float64)

        def objective():
            return generator_objective(g, teacher, images,
                                       alpha=1.0, beta=1.0).total

        for analytic, numeric in _numeric_gradients(objective,
                                                    g.parameters()):
            self.assertLessEqual(abs(analytic - numeric),
                                 1e-4 * max(abs(numeric), 1e-12))

    def test_backward_teacherUntouched(self):
        """
        Arrange: a frozen teacher
        Act: back-propagate the objective
        Assert: the teacher receives no gradients and G does
        """
        generator_objective(self.g, self.teacher, _images()).total.backward()
        self.assertTrue(all(p.grad is None for p in self.teacher.parameters()))
        self.assertTrue(any(p.grad is not None for p in self.g.parameters()))


class TestPixelObjectiveSuite(unittest.TestCase):
    """
    This suite tests the objective of direct pixel optimization.
    """
    def setUp(self):
        self.teacher = freeze(build_network(tiny_spec('teacher'), seed=0))

    def test_untouchedPixels_matchIdentityG(self):
        """
        Arrange: pixels equal to their reference and a transformation network
            whose correction is zero
        Act: compute both objectives
        Assert: the reconstruction term is 0 and the BN terms agree
        """
        reference = _images()
        g = build_network(tiny_transform_spec(), seed=1)
        with torch.no_grad():
            g.head.weight.zero_()
            g.head.bias.zero_()
        pixels = pixel_objective(reference.clone(), self.teacher, reference)
        network = generator_objective(g, self.teacher, reference)
        self.assertEqual(0.0, float(pixels.components['rec']))
        self.assertAlmostEqual(float(network.components['bn']),
                               float(pixels.components['bn']), places=4)

    def test_backward_onlyPixelsGetGradients(self):
        """
        Arrange: pixels that require gradients
        Act: back-propagate the objective
        Assert: the pixels receive gradients and the teacher doesn't
        """
        reference = _images()
        pixels = reference.clone().requires_grad_(True)
        pixel_objective(pixels, self.teacher, reference).total.backward()
        self.assertIsNotNone(pixels.grad)
        self.assertTrue(all(p.grad is None for p in self.teacher.parameters()))

    def test_negativeWeight_raises(self):
        """
        Arrange: a negative β
        Act: compute the objective
        Assert: a `LossError` is raised
        """
        with self.assertRaises(LossError):
            pixel_objective(_images(), self.teacher, _images(), beta=-1.0)


class TestDistillationObjectiveSuite(unittest.TestCase):
    """
    This suite tests the student's objective.
    """
    def setUp(self):
        self.teacher = freeze(build_network(tiny_spec('teacher'), seed=0))
        self.g = build_network(tiny_transform_spec(), seed=1)

    def test_studentIsTeacher_expectedConstant(self):
        """
        Arrange: a student that's a copy of the teacher
        Act: compute the objective on two branches
        Assert: each branch is 3 ln 0.5
        """
        student = copy.deepcopy(self.teacher)
        loss = distillation_objective(self.teacher, student, None,
                                      _images(seed=1), _images(seed=2))
        self.assertAlmostEqual(3 * LN_HALF,
                               float(loss.components['branch1']), places=4)
        self.assertAlmostEqual(2 * 3 * LN_HALF, float(loss.total), places=4)

    def test_noMixedBatch_singleBranch(self):
        """
        Arrange: no mixed batch
        Act: compute the objective
        Assert: only the first branch is present
        """
        student = build_network(tiny_spec('student'), seed=2)
        loss = distillation_objective(self.teacher, student, self.g,
                                      _images(), None)
        self.assertEqual(['branch1'], list(loss.components))

    def test_backward_onlyStudentUpdated(self):
        """
        Arrange: a student, a teacher and a transformation network
        Act: back-propagate the objective
        Assert: only the student receives gradients
        """
        student = build_network(tiny_spec('student'), seed=2)
        loss = distillation_objective(self.teacher, student, self.g,
                                      _images(seed=1), _images(seed=2),
                                      transform_raw_branch=True)
        loss.total.backward()
        self.assertTrue(all(p.grad is None for p in self.g.parameters()))
        self.assertTrue(all(p.grad is None for p in self.teacher.parameters()))
        self.assertTrue(any(p.grad is not None for p in student.parameters()))

    def test_rawBranchWithoutG_raises(self):
        """
        Arrange: no transformation network
        Act: ask for the raw branch to be transformed
        Assert: a `LossError` is raised
        """
        student = build_network(tiny_spec('student'), seed=2)
        with self.assertRaises(LossError):
            distillation_objective(self.teacher, student, None, _images(),
                                   _images(), transform_raw_branch=True)

    def test_branchShapeMismatch_raises(self):
        """
        Arrange: branches of different sizes
        Act: compute the objective
        Assert: a `ShapeError` is raised
        """
        student = build_network(tiny_spec('student'), seed=2)
        with self.assertRaises(ShapeError):
            distillation_objective(self.teacher, student, None, _images(2),
                                   _images(3))

    def test_gradients_matchCentralDifferences(self):
        """
        Arrange: double-precision networks
        Act: differentiate the objective with respect to the student's
            parameters
        Assert: analytic and central-difference gradients agree to a relative
            1e-4
        """
        teacher = self.teacher.double()
        g = self.g.double()
        student = build_network(tiny_spec('student'), seed=2).double().eval()
        raw = _images(seed=1, dtype=torch.float64)
        mixed = _images(seed=2, dtype=torch.float64)

        def objective():
            return distillation_objective(teacher, student, g, raw,
                                          mixed).total

        for analytic, numeric in _numeric_gradients(objective,
                                                    student.parameters()):
            self.assertLessEqual(abs(analytic - numeric),
                                 1e-4 * max(abs(numeric), 1e-12))


class TestLossBreakdownSuite(unittest.TestCase):
    """
    This suite tests the loss breakdown.
    """
    def test_total_weightedSum(self):
        """
        Arrange: weighted components
        Act: create a breakdown
        Assert: the total is the weighted sum and `to_dict` lists everything
        """
        loss = LossBreakdown({'a': torch.tensor(2.0), 'b': torch.tensor(3.0)},
                             weights={'a': 0.5})
        self.assertAlmostEqual(4.0, float(loss.total))
        self.assertEqual(['total', 'a', 'b'], list(loss.to_dict()))
        self.assertTrue(loss.is_finite())

    def test_nan_notFinite(self):
        """
        Arrange: a NaN component
        Act: check the breakdown
        Assert: it isn't finite
        """
        loss = LossBreakdown({'a': torch.tensor(float('nan'))})
        self.assertFalse(loss.is_finite())


if __name__ == '__main__':
    unittest.main()
