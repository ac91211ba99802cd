from django.contrib import admin
from .models import SimulationRun, OutputFile, RetentionFitRecord


class OutputFileInline(admin.TabularInline):
    model = OutputFile
    extra = 0
    readonly_fields = ['path', 'kind', 'sha256']


class RetentionFitInline(admin.TabularInline):
    model = RetentionFitRecord
    extra = 0


@admin.register(SimulationRun)
class SimulationRunAdmin(admin.ModelAdmin):
    list_display = ['subcommand', 'config_hash', 'seed', 'status', 'exit_code', 'created_at']
    list_filter = ['subcommand', 'status', 'created_at']
    search_fields = ['config_hash', 'output_dir']
    inlines = [OutputFileInline, RetentionFitInline]
    readonly_fields = ['id', 'created_at', 'finished_at', 'versions']


@admin.register(RetentionFitRecord)
class RetentionFitRecordAdmin(admin.ModelAdmin):
    list_display = ['run', 'width', 'amplitude', 'tau', 'p0', 'p_inf', 'rmse', 'converged', 'identifiable']
    list_filter = ['converged', 'identifiable']
