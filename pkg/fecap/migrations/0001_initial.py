# Generated by Django 5.2.7 on 2026-10-19 09:12

import django.db.models.deletion
import uuid
from django.db import migrations, models


class Migration(migrations.Migration):

    initial = True

    dependencies = [
    ]

    operations = [
        migrations.CreateModel(
            name='SimulationRun',
            fields=[
                ('id', models.UUIDField(default=uuid.uuid4, editable=False, primary_key=True, serialize=False)),
                ('subcommand', models.CharField(choices=[('landscape', 'Landscape'), ('pund', 'PUND'), ('kinetics', 'Switching kinetics'), ('retention', 'Retention'), ('endurance', 'Endurance'), ('sweep', 'Retention sweep'), ('fit', 'Exponential fit')], max_length=20)),
                ('config_hash', models.CharField(db_index=True, max_length=64)),
                ('seed', models.BigIntegerField(default=0)),
                ('status', models.CharField(choices=[('running', 'Running'), ('succeeded', 'Succeeded'), ('failed', 'Failed')], default='running', max_length=10)),
                ('exit_code', models.PositiveSmallIntegerField(blank=True, null=True)),
                ('output_dir', models.CharField(max_length=500)),
                ('error_message', models.TextField(blank=True, default='')),
                ('versions', models.JSONField(blank=True, default=dict)),
                ('created_at', models.DateTimeField(auto_now_add=True)),
                ('finished_at', models.DateTimeField(blank=True, null=True)),
            ],
            options={
                'ordering': ['-created_at'],
            },
        ),
        migrations.CreateModel(
            name='OutputFile',
            fields=[
                ('id', models.BigAutoField(auto_created=True, primary_key=True, serialize=False, verbose_name='ID')),
                ('path', models.CharField(help_text='Path relative to the run directory', max_length=300)),
                ('kind', models.CharField(choices=[('csv', 'CSV'), ('json', 'JSON'), ('jsonl', 'JSON lines'), ('ini', 'Configuration')], max_length=10)),
                ('sha256', models.CharField(max_length=64)),
                ('run', models.ForeignKey(on_delete=django.db.models.deletion.CASCADE, related_name='files', to='fecap.simulationrun')),
            ],
            options={
                'ordering': ['path'],
                'unique_together': {('run', 'path')},
            },
        ),
        migrations.CreateModel(
            name='RetentionFitRecord',
            fields=[
                ('id', models.BigAutoField(auto_created=True, primary_key=True, serialize=False, verbose_name='ID')),
                ('width', models.FloatField(blank=True, help_text='Program pulse width in s', null=True)),
                ('amplitude', models.FloatField(blank=True, help_text='Program pulse amplitude in V', null=True)),
                ('p0', models.FloatField()),
                ('p_inf', models.FloatField()),
                ('tau', models.FloatField(blank=True, help_text='Time constant in s; empty when unidentifiable', null=True)),
                ('rmse', models.FloatField()),
                ('converged', models.BooleanField(default=True)),
                ('identifiable', models.BooleanField(default=True)),
                ('run', models.ForeignKey(on_delete=django.db.models.deletion.CASCADE, related_name='fits', to='fecap.simulationrun')),
            ],
            options={
                'ordering': ['width', 'amplitude'],
            },
        ),
    ]
