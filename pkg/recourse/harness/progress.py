"""
Equal Recourse - Experiment Progress
Periodic heartbeat with completed / failed run counts while an experiment runs
"""

import logging
import time
from typing import Optional

from apscheduler.schedulers.asyncio import AsyncIOScheduler

logger = logging.getLogger(__name__)


class ProgressTracker:
    """
    Run counter with an interval heartbeat:
    - record_success / record_failure are called as runs finish
    - start() must be called from inside the running event loop
    """

    def __init__(self, total: int, interval: float = 30.0, label: str = "experiment"):
        self.total = total
        self.interval = interval
        self.label = label
        self.completed = 0
        self.failed = 0
        self.started_at = time.monotonic()
        self.scheduler: Optional[AsyncIOScheduler] = None

    @property
    def finished(self) -> int:
        return self.completed + self.failed

    def record_success(self, run_id: int):
        self.completed += 1
        logger.debug(f"Run {run_id} finished ({self.finished}/{self.total})")

    def record_failure(self, run_id: int, error: BaseException):
        self.failed += 1
        logger.error(f"❌ Run {run_id} failed: {error}")

    async def heartbeat(self):
        elapsed = time.monotonic() - self.started_at
        logger.info(
            f"📊 {self.label}: {self.completed}/{self.total} runs done, {self.failed} failed ({elapsed:.0f}s elapsed)"
        )

    def start(self):
        try:
            self.scheduler = AsyncIOScheduler()
            self.scheduler.add_job(
                self.heartbeat,
                'interval',
                seconds=self.interval,
                id='experiment_progress',
                max_instances=1,
                coalesce=True
            )
            self.scheduler.start()
            logger.info(f"🚀 {self.label}: {self.total} runs scheduled (progress every {self.interval:.0f}s)")
        except Exception as e:
            logger.warning(f"⚠️ Progress heartbeat unavailable: {e}")
            self.scheduler = None

    def stop(self):
        if self.scheduler is not None and self.scheduler.running:
            self.scheduler.shutdown(wait=False)
        self.scheduler = None
