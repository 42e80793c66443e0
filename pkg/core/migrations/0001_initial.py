# Generated by Django 5.2 on 2026-10-19 00:00

import django.db.models.deletion
from django.db import migrations, models


class Migration(migrations.Migration):

    initial = True

    dependencies = [
    ]

    operations = [
        migrations.CreateModel(
            name='Participant',
            fields=[
                ('id', models.BigAutoField(auto_created=True, primary_key=True, serialize=False, verbose_name='ID')),
                ('participant_id', models.CharField(max_length=64, unique=True)),
                ('class_label', models.CharField(choices=[('Novice', 'Novice'), ('Intermediate', 'Intermediate'), ('Expert', 'Expert')], max_length=16)),
            ],
        ),
        migrations.CreateModel(
            name='Trial',
            fields=[
                ('id', models.BigAutoField(auto_created=True, primary_key=True, serialize=False, verbose_name='ID')),
                ('stimulus_id', models.IntegerField()),
                ('block', models.IntegerField()),
                ('n_samples', models.IntegerField(default=0)),
                ('tracking_ratio', models.FloatField(default=0.0)),
                ('is_dropped', models.BooleanField(default=False)),
                ('drop_reason', models.CharField(blank=True, max_length=64, null=True)),
                ('is_archived', models.BooleanField(default=False)),
                ('archived_at', models.DateTimeField(blank=True, null=True)),
                ('created_on', models.DateTimeField(auto_now_add=True)),
                ('updated_on', models.DateTimeField(auto_now=True)),
                ('participant', models.ForeignKey(on_delete=django.db.models.deletion.CASCADE, related_name='trials', to='core.participant')),
            ],
            options={
                'indexes': [models.Index(fields=['participant', 'is_archived'], name='core_trial_part_archived_idx')],
                'unique_together': {('participant', 'stimulus_id', 'block')},
            },
        ),
    ]
