from django.db import models
import uuid


class SimulationRun(models.Model):
    """One invocation of a simulator subcommand and where its outputs went"""
    SUBCOMMAND_CHOICES = [
        ('landscape', 'Landscape'),
        ('pund', 'PUND'),
        ('kinetics', 'Switching kinetics'),
        ('retention', 'Retention'),
        ('endurance', 'Endurance'),
        ('sweep', 'Retention sweep'),
        ('fit', 'Exponential fit'),
    ]
    STATUS_CHOICES = [
        ('running', 'Running'),
        ('succeeded', 'Succeeded'),
        ('failed', 'Failed'),
    ]

    id = models.UUIDField(primary_key=True, default=uuid.uuid4, editable=False)
    subcommand = models.CharField(max_length=20, choices=SUBCOMMAND_CHOICES)
    config_hash = models.CharField(max_length=64, db_index=True)
    seed = models.BigIntegerField(default=0)
    status = models.CharField(max_length=10, choices=STATUS_CHOICES, default='running')
    exit_code = models.PositiveSmallIntegerField(null=True, blank=True)
    output_dir = models.CharField(max_length=500)
    error_message = models.TextField(blank=True, default='')
    versions = models.JSONField(default=dict, blank=True)
    created_at = models.DateTimeField(auto_now_add=True)
    finished_at = models.DateTimeField(null=True, blank=True)

    class Meta:
        ordering = ['-created_at']

    def __str__(self):
        return f"{self.subcommand} {self.config_hash[:12]} seed={self.seed} ({self.status})"

    @property
    def total_files(self):
        return self.files.count()


class OutputFile(models.Model):
    """A file written by a run, as listed in its manifest"""
    KIND_CHOICES = [
        ('csv', 'CSV'),
        ('json', 'JSON'),
        ('jsonl', 'JSON lines'),
        ('ini', 'Configuration'),
    ]

    run = models.ForeignKey(SimulationRun, on_delete=models.CASCADE, related_name='files')
    path = models.CharField(max_length=300, help_text='Path relative to the run directory')
    kind = models.CharField(max_length=10, choices=KIND_CHOICES)
    sha256 = models.CharField(max_length=64)

    class Meta:
        ordering = ['path']
        unique_together = ['run', 'path']

    def __str__(self):
        return self.path


class RetentionFitRecord(models.Model):
    """Fitted P(t) = p0 exp(-t/tau) + p_inf for one program pulse"""
    run = models.ForeignKey(SimulationRun, on_delete=models.CASCADE, related_name='fits')
    width = models.FloatField(null=True, blank=True, help_text='Program pulse width in s')
    amplitude = models.FloatField(null=True, blank=True, help_text='Program pulse amplitude in V')
    p0 = models.FloatField()
    p_inf = models.FloatField()
    tau = models.FloatField(null=True, blank=True, help_text='Time constant in s; empty when unidentifiable')
    rmse = models.FloatField()
    converged = models.BooleanField(default=True)
    identifiable = models.BooleanField(default=True)

    class Meta:
        ordering = ['width', 'amplitude']

    def __str__(self):
        return f"tau={self.tau} (w={self.width}, A={self.amplitude})"
