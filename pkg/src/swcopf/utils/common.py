import io
import logging
import os
from datetime import datetime
from time import perf_counter

LOGGER_NAME = 'SwCOPF'


###### Logging ######

class CustomLogger:
    """
    The 'SwCOPF' logger with a console handler and an in-memory buffer.

    The output folder of a run is only known after the scenario count is computed,
    so records are buffered until `flush_to_file` names the log directory. From then on
    a FileHandler appends directly.

    Args:
        log_file (str or None): log file name, None keeps the log in memory only.
        log_dir (str): directory used by `flush_to_file` when none is given, 'auto' means 'logs'.
        prefix_date (bool): prefix the file name with today's date.
        prefix_jobid (int): prefix the file name with a zero-padded job id when non-zero.
        append_to_file (bool): append to an existing log file instead of overwriting it.
        show_timestamp (bool): prefix every record with its time.
    """
    def __init__(self, log_file='swcopf.log', log_dir='auto', prefix_date=True, prefix_jobid=0, append_to_file=True, show_timestamp=True):
        self.log_file       = log_file
        self.log_dir        = log_dir
        self.flush_file     = log_file is not None
        self.prefix_date    = prefix_date
        self.prefix_jobid   = prefix_jobid
        self.append_to_file = append_to_file
        self.show_timestamp = show_timestamp
        self.file_handler   = None
        self.log_path       = None

        self.logger = logging.getLogger(LOGGER_NAME)
        self.logger.setLevel(logging.INFO)
        self.logger.handlers.clear()
        self.logger.propagate = False

        self.console_handler = self._handler(logging.StreamHandler())
        self.log_buffer      = io.StringIO()
        self.buffer_handler  = self._handler(logging.StreamHandler(self.log_buffer))
        self.logger.addHandler(self.console_handler)
        self.logger.addHandler(self.buffer_handler)

        vprint("### SwCOPF logger ###")
        vprint(f"log_file = {self.log_file!r} (None keeps the log in memory), log_dir = {self.log_dir!r}")
        vprint(f"prefix_date = {self.prefix_date}, prefix_jobid = {self.prefix_jobid}, append_to_file = {self.append_to_file}")
        vprint(' ')

    def _handler(self, handler):
        handler.setLevel(logging.INFO)
        handler.setFormatter(logging.Formatter('%(asctime)s - %(message)s' if self.show_timestamp else '%(message)s'))
        return handler

    def file_name(self):
        name = self.log_file
        if self.prefix_jobid:
            name = f"{int(self.prefix_jobid):02d}_{name}"
        if self.prefix_date:
            name = f"{get_date()}_{name}"
        return name

    def route(self, name):
        """ Send the records of another logger (e.g. 'optuna') through the console and buffer handlers """
        other = logging.getLogger(name)
        other.setLevel(logging.INFO)
        other.propagate = False
        for handler in list(other.handlers):
            if isinstance(handler, logging.StreamHandler):
                other.removeHandler(handler)
        other.addHandler(self.console_handler)
        other.addHandler(self.buffer_handler)
        if self.file_handler is not None:
            other.addHandler(self.file_handler)

    def flush_to_file(self, log_dir=None, append_to_file=None):
        """
        Write the buffered records to `<log_dir>/<file_name()>` and keep appending there.
        A second call with another directory moves the file handler, the buffer having been emptied.
        """
        if not self.flush_file:
            vprint(f"### Log stays in memory since log_file = {self.log_file} ###")
            return None

        log_dir = log_dir or ('logs' if self.log_dir == 'auto' else self.log_dir)
        log_path = os.path.join(log_dir, self.file_name())
        if log_path == self.log_path:
            return log_path
        append_to_file = self.append_to_file if append_to_file is None else append_to_file

        os.makedirs(log_dir, exist_ok=True)
        with open(log_path, 'a' if append_to_file else 'w') as f:
            f.write(self.log_buffer.getvalue())
        self.log_buffer.truncate(0)
        self.log_buffer.seek(0)

        self.close()
        self.file_handler = self._handler(logging.FileHandler(log_path, mode='a'))
        self.logger.addHandler(self.file_handler)
        self.log_path = log_path
        vprint(f"### Log file is written to {log_path} ###")
        vprint(' ')
        return log_path

    def close(self):
        if self.file_handler is None:
            return
        self.file_handler.flush()
        self.file_handler.close()
        for name in (LOGGER_NAME, 'optuna'):
            logging.getLogger(name).removeHandler(self.file_handler)
        self.file_handler = None

def vprint(*args, verbose=True, **kwargs):
    """Verbose print/logging with individual control."""
    if not verbose:
        return
    logger = logging.getLogger(LOGGER_NAME)
    if logger.hasHandlers():
        logger.info(' '.join(map(str, args)), **kwargs)
    else:
        print(*args, **kwargs)


###### Run information ######

def print_system_info():
    """ Log the platform, the CPU and thread budget, and the versions of the numerical stack """
    import importlib.metadata
    import platform
    import sys

    vprint("### System information ###")
    vprint(f"Platform: {platform.platform()} ({platform.machine()})")
    vprint(f"Python: {sys.version.split()[0]} at {sys.executable}")

    cpus = os.environ.get('SLURM_CPUS_PER_TASK') or os.environ.get('SLURM_JOB_CPUS_PER_NODE') or os.cpu_count()
    vprint(f"CPU cores: {cpus}, NUMBA_NUM_THREADS = {os.environ.get('NUMBA_NUM_THREADS', 'default')}")
    try:
        import psutil
        vprint(f"Available memory: {psutil.virtual_memory().available / 1024 ** 3:.2f} GB")
    except ImportError:
        pass

    for name in ('numpy', 'scipy', 'numba', 'optuna', 'pyyaml'):
        try:
            vprint(f"{name:<8}: {importlib.metadata.version(name)}")
        except importlib.metadata.PackageNotFoundError:
            vprint(f"{name:<8}: not installed")

    # Editable installs keep the metadata version from install time
    import swcopf
    vprint(f"swcopf  : {swcopf.__version__} at {os.path.dirname(swcopf.__file__)}")
    vprint(" ")

def get_date(date_format='%Y%m%d'):
    return datetime.now().strftime(date_format)

def time_sync():
    return perf_counter()

def parse_sec_to_time_str(seconds):
    """ 3725.5 -> '1 hr 2 min 5.500 sec' """
    parts = []
    for unit, size in (('day', 86400), ('hr', 3600), ('min', 60)):
        count, seconds = divmod(seconds, size)
        if count or parts:
            parts.append(f"{int(count)} {unit}")
    parts.append(f"{seconds:.3f} sec")
    return ' '.join(parts)
