# Generated by Django 5.2.9 on 2026-10-17 09:12

import django.db.models.deletion
import django.utils.timezone
from django.db import migrations, models


class Migration(migrations.Migration):

    initial = True

    dependencies = [
    ]

    operations = [
        migrations.CreateModel(
            name='CrossValidationRun',
            fields=[
                ('id', models.BigAutoField(auto_created=True, primary_key=True, serialize=False, verbose_name='ID')),
                ('kind', models.CharField(choices=[('cnn', 'CNN'), ('rnn', 'RNN'), ('bcnn', 'B-CNN'), ('brnn', 'B-RNN'), ('hybrid', 'Hybrid')], max_length=10)),
                ('schema', models.CharField(max_length=20)),
                ('strata', models.CharField(choices=[('event', 'Seizure event'), ('window', 'Window')], default='event', max_length=10)),
                ('seed', models.IntegerField(default=0)),
                ('folds', models.IntegerField(default=5)),
                ('repeats', models.IntegerField(default=1)),
                ('mean_weighted_f1', models.FloatField()),
                ('std_weighted_f1', models.FloatField()),
                ('mean_macro_f1', models.FloatField()),
                ('dataset_path', models.CharField(max_length=500)),
                ('results_path', models.CharField(blank=True, max_length=500)),
                ('created_at', models.DateTimeField(db_index=True, default=django.utils.timezone.now)),
            ],
            options={
                'verbose_name': 'Cross-validation run',
                'ordering': ['-created_at'],
            },
        ),
        migrations.CreateModel(
            name='FoldScore',
            fields=[
                ('id', models.BigAutoField(auto_created=True, primary_key=True, serialize=False, verbose_name='ID')),
                ('repeat', models.IntegerField(default=0)),
                ('fold', models.IntegerField()),
                ('weighted_f1', models.FloatField()),
                ('macro_f1', models.FloatField()),
                ('run', models.ForeignKey(on_delete=django.db.models.deletion.CASCADE, related_name='fold_scores', to='seizure.crossvalidationrun')),
            ],
            options={
                'ordering': ['run', 'repeat', 'fold'],
                'constraints': [models.UniqueConstraint(fields=('run', 'repeat', 'fold'), name='unique_fold_per_run')],
            },
        ),
    ]
