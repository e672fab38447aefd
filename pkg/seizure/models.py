from django.db import models
from django.utils import timezone

from .networks import ModelKind


class CrossValidationRun(models.Model):
    STRATA_CHOICES = [
        ('event', 'Seizure event'),
        ('window', 'Window'),
    ]

    kind = models.CharField(max_length=10, choices=ModelKind.choices)
    schema = models.CharField(max_length=20)
    strata = models.CharField(max_length=10, choices=STRATA_CHOICES, default='event')
    seed = models.IntegerField(default=0)
    folds = models.IntegerField(default=5)
    repeats = models.IntegerField(default=1)
    mean_weighted_f1 = models.FloatField()
    std_weighted_f1 = models.FloatField()
    mean_macro_f1 = models.FloatField()
    dataset_path = models.CharField(max_length=500)
    results_path = models.CharField(max_length=500, blank=True)
    created_at = models.DateTimeField(default=timezone.now, db_index=True)

    class Meta:
        ordering = ['-created_at']
        verbose_name = 'Cross-validation run'

    def __str__(self):
        return f"{self.get_kind_display()} {self.schema} seed {self.seed}: {self.mean_weighted_f1:.4f}"

    def weighted_scores(self):
        return list(self.fold_scores.order_by('repeat', 'fold').values_list('weighted_f1', flat=True))


class FoldScore(models.Model):
    run = models.ForeignKey(CrossValidationRun, on_delete=models.CASCADE, related_name='fold_scores')
    repeat = models.IntegerField(default=0)
    fold = models.IntegerField()
    weighted_f1 = models.FloatField()
    macro_f1 = models.FloatField()

    class Meta:
        ordering = ['run', 'repeat', 'fold']
        constraints = [
            models.UniqueConstraint(fields=['run', 'repeat', 'fold'], name='unique_fold_per_run'),
        ]

    def __str__(self):
        return f"{self.run_id} r{self.repeat} f{self.fold}: {self.weighted_f1:.4f}"
