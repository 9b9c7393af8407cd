# Generated by Django 5.0 on 2026-10-18 09:12

import django.db.models.deletion
from django.db import migrations, models


class Migration(migrations.Migration):

    initial = True

    dependencies = []

    operations = [
        migrations.CreateModel(
            name='ExperimentRun',
            fields=[
                ('id', models.BigAutoField(auto_created=True, primary_key=True, serialize=False, verbose_name='ID')),
                ('run_id', models.CharField(help_text='Hash of command, config snapshot and seed', max_length=16, unique=True)),
                ('command', models.CharField(choices=[('gen_data', 'Generate dataset'), ('solve', 'Iterative solve'), ('train', 'Train UTRR'), ('evaluate', 'Evaluate models'), ('sweep_snr', 'SNR sweep')], max_length=20)),
                ('config_snapshot', models.TextField(help_text='Config text exactly as run, seed pinned')),
                ('seed', models.BigIntegerField()),
                ('output_dir', models.CharField(max_length=500)),
                ('status', models.CharField(choices=[('pending', 'Pending'), ('finished', 'Finished'), ('failed', 'Failed')], default='pending', max_length=10)),
                ('created_at', models.DateTimeField(auto_now_add=True)),
                ('finished_at', models.DateTimeField(blank=True, null=True)),
                ('wall_seconds', models.FloatField(blank=True, null=True)),
                ('message', models.TextField(blank=True, default='')),
            ],
            options={
                'ordering': ['-created_at'],
            },
        ),
        migrations.CreateModel(
            name='RunMetric',
            fields=[
                ('id', models.BigAutoField(auto_created=True, primary_key=True, serialize=False, verbose_name='ID')),
                ('method', models.CharField(max_length=40)),
                ('snr_db', models.FloatField(blank=True, null=True)),
                ('k_param', models.IntegerField(blank=True, null=True)),
                ('metric', models.CharField(max_length=40)),
                ('value', models.FloatField()),
                ('run', models.ForeignKey(on_delete=django.db.models.deletion.CASCADE, related_name='metrics', to='beamspace.experimentrun')),
            ],
            options={
                'ordering': ['id'],
            },
        ),
    ]
