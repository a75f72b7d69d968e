# Generated by Django 5.2.10 on 2026-10-18 09:12

import django.db.models.deletion
from django.db import migrations, models


class Migration(migrations.Migration):

    initial = True

    dependencies = [
    ]

    operations = [
        migrations.CreateModel(
            name='ExperimentRun',
            fields=[
                ('id', models.BigAutoField(auto_created=True, primary_key=True, serialize=False, verbose_name='ID')),
                ('dataset', models.CharField(db_index=True, max_length=50)),
                ('kind', models.CharField(choices=[('eval', 'Evaluation'), ('experiment', 'Multi-seed experiment'), ('k_sweep', 'K sweep point'), ('noise', 'Contamination sweep point')], db_index=True, max_length=20)),
                ('setting', models.CharField(blank=True, default='', max_length=50)),
                ('config_fingerprint', models.CharField(db_index=True, max_length=64)),
                ('effective_config', models.JSONField(default=dict)),
                ('precision', models.FloatField(blank=True, null=True)),
                ('recall', models.FloatField(blank=True, null=True)),
                ('f1', models.FloatField(blank=True, null=True)),
                ('status', models.CharField(choices=[('ok', 'Completed'), ('partial', 'Some seeds failed'), ('failed', 'Failed')], db_index=True, max_length=10)),
                ('created_at', models.DateTimeField(auto_now_add=True)),
                ('updated_at', models.DateTimeField(auto_now=True)),
            ],
            options={
                'ordering': ['dataset', 'kind', 'setting'],
                'indexes': [models.Index(fields=['dataset', 'kind'], name='detection_e_dataset_019ce3_idx')],
                'unique_together': {('config_fingerprint', 'kind', 'setting')},
            },
        ),
        migrations.CreateModel(
            name='SeedResult',
            fields=[
                ('id', models.BigAutoField(auto_created=True, primary_key=True, serialize=False, verbose_name='ID')),
                ('seed', models.PositiveIntegerField()),
                ('status', models.CharField(choices=[('ok', 'Completed'), ('failed', 'Failed')], max_length=10)),
                ('precision', models.FloatField(blank=True, null=True)),
                ('recall', models.FloatField(blank=True, null=True)),
                ('f1', models.FloatField(blank=True, null=True)),
                ('threshold', models.FloatField(blank=True, null=True)),
                ('error', models.TextField(blank=True, default='')),
                ('run', models.ForeignKey(on_delete=django.db.models.deletion.CASCADE, related_name='seed_results', to='detection.experimentrun')),
            ],
            options={
                'ordering': ['run', 'seed'],
                'unique_together': {('run', 'seed')},
            },
        ),
    ]
